"""Van der Waals eikonal phase and atom transmission function over the slit line.

The bars attract with -C6/l^6 per volume element. Integrating along the
straight path through slit coordinate s2 and over the bar cross section
gives phi = 3 C3/(hbar v) * integral over bars of h^-4 dA, where h is the
distance of the area element from the path. Because the chord length of a
polygon along the beam is piecewise linear in the transverse coordinate,
two integrations by parts turn this into a sum over the polygon corners,

    phi = C3/(2 hbar v) * sum_k c_k / h_k^2,

with c_k the jump in slope of the chord length at corner k. This is what
:class:`PhaseKernel` evaluates; :func:`phase_closed_form` is the same
result written out for th' > beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import HBAR_MEV_S
from .errors import ConfigError, DomainError
from .geometry import _require_open, slit_frame

EDGE_MARGIN_REL = 1e-4


@dataclass(frozen=True)
class SurfacePotentialParams:
    """Atom-surface coupling; ``C3`` in meV nm^3."""

    C3: float = 0.0

    def __post_init__(self):
        if not (self.C3 >= 0.0):
            raise ConfigError(f"C3 must be non-negative, got {self.C3}")

    @property
    def C6(self):
        return 6.0 * self.C3 / math.pi


def phase_prefactor(C3, speed):
    """C3 / (2 hbar v) in nm^2 for ``speed`` in m/s."""
    return C3 / (2.0 * HBAR_MEV_S * speed * 1e9)


def _corner_weights(poly, e, n):
    """Corner coordinates eta_k = P_k . n and slope jumps c_k of the chord length.

    The chord at transverse coordinate eta is the sum over edges of
    +-(crossing point . e); each edge contributes a constant slope in eta
    over its own eta range, which gives the jumps at its two ends.
    """
    area2 = 0.0
    m = len(poly)
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        area2 += a[0] * b[1] - a[1] * b[0]
    orient = 1.0 if area2 > 0 else -1.0
    eta = poly @ n
    c = np.zeros(m)
    for i in range(m):
        j = (i + 1) % m
        if np.array_equal(poly[i], poly[j]):
            continue
        de = eta[j] - eta[i]
        if de == 0.0:
            raise ConfigError("bar edge parallel to the beam; theta' = +-beta is excluded")
        slope = orient * math.copysign(1.0, de) * ((poly[j] - poly[i]) @ e) / de
        lo, hi = (i, j) if de > 0 else (j, i)
        c[lo] += slope
        c[hi] -= slope
    return eta, c


@dataclass(frozen=True)
class PhaseKernel:
    """Vectorized phase for one (geometry, angle, speed, C3).

    Evaluates phi(s2) = pref * sum_k c_k / (eta_k - eta0(s2))^2 with
    eta0(s2) = eta_origin + (S0/2 + s2) cos(alpha + th').
    """

    prefactor: float
    eta: np.ndarray
    weights: np.ndarray
    eta_origin: float
    cos_proj: float
    S0: float

    @classmethod
    def build(cls, geom, theta, speed, C3):
        fr = slit_frame(geom, theta)
        _require_open(fr)
        e, n = fr.beam_dir, fr.beam_normal
        etas, ws = [np.zeros(0)], [np.zeros(0)]
        for shift in (0, -1) if geom.thickness_t > 0 else ():
            eta, c = _corner_weights(geom.bar_polygon(shift), e, n)
            etas.append(eta)
            ws.append(c)
        return cls(
            prefactor=phase_prefactor(C3, speed),
            eta=np.concatenate(etas),
            weights=np.concatenate(ws),
            eta_origin=float(np.asarray(fr.origin) @ n),
            cos_proj=fr.cos_proj,
            S0=fr.S0,
        )

    def __call__(self, s2):
        s2 = np.asarray(s2, dtype=float)
        if self.prefactor == 0.0:
            return np.zeros_like(s2)
        eta0 = self.eta_origin + (self.S0 / 2 + s2) * self.cos_proj
        out = np.zeros_like(s2)
        for ek, ck in zip(self.eta, self.weights):
            if ck != 0.0:
                out += ck / (ek - eta0) ** 2
        return self.prefactor * out

    def derivatives(self, s2):
        """(phi, dphi/ds2, d2phi/ds2^2) at ``s2``."""
        s2 = np.asarray(s2, dtype=float)
        eta0 = self.eta_origin + (self.S0 / 2 + s2) * self.cos_proj
        f0, f1, f2 = (np.zeros_like(s2) for _ in range(3))
        cp = self.cos_proj
        for ek, ck in zip(self.eta, self.weights):
            if ck != 0.0:
                x = ek - eta0
                f0 += ck / x**2
                f1 += 2 * ck * cp / x**3
                f2 += 6 * ck * cp * cp / x**4
        p = self.prefactor
        return p * f0, p * f1, p * f2


def phase_closed_form(geom, theta, speed, C3, s2):
    """Closed form of the phase for th' > beta (tilted slit line).

    xi_11 and xi_21 are the distances along the slit line to its upper and
    lower ends, xi_12 and xi_22 those to the two other corners of the
    upper bar, with d~ = d cos th'/cos(alpha+th') the period measured along
    the slit line.
    """
    fr = slit_frame(geom, theta)
    if fr.regime != "tilted":
        raise ConfigError("closed form applies only for theta' > beta")
    s2 = np.asarray(s2, dtype=float)
    a, S0, c = fr.alpha, fr.S0, fr.cos_proj
    ct = math.cos(theta)
    d_t = ct / c * geom.period_d
    s0_t = ct / c * geom.slit_width_s0
    x11 = S0 / 2 - s2
    x21 = S0 / 2 + s2
    x12 = x11 - s0_t + math.cos(a - theta) / c * S0
    x22 = x11 - s0_t
    tp, tb = math.tan(theta), geom.tan_beta
    upper = (x11**-2 + (x11 - d_t) ** -2 - x12**-2 - (x12 - d_t) ** -2) / (tp + tb)
    lower = (x21**-2 + (x21 - d_t) ** -2 - x22**-2 - (x22 + d_t) ** -2) / (tp - tb)
    pref = phase_prefactor(C3, speed) / (ct**2 * c**2)
    return pref * (upper + lower)


def phase_function(geom, beam, params, s2):
    """Eikonal phase phi(s2) of an atom crossing the slit line at ``s2``.

    Raises :class:`DomainError` at or beyond the slit edges,
    :class:`GeometrySingularity` for th' = +-beta and
    :class:`ShadowingError` once the slit is closed by shadowing.
    """
    fr = slit_frame(geom, beam.theta)
    _require_open(fr)
    s2 = np.asarray(s2, dtype=float)
    if np.any(np.abs(s2) >= fr.S0 / 2):
        raise DomainError(f"s2 must lie strictly inside (-{fr.S0 / 2:.6g}, {fr.S0 / 2:.6g})")
    if params.C3 == 0.0:
        return np.zeros_like(s2)
    if fr.regime == "tilted":
        return phase_closed_form(geom, beam.theta, beam.speed, params.C3, s2)
    return PhaseKernel.build(geom, beam.theta, beam.speed, params.C3)(s2)


@dataclass(frozen=True)
class TransmissionProfile:
    """tau(s2) = exp(i phi(s2)) inside the slit, 0 outside."""

    kernel: PhaseKernel
    S0: float
    geom: object
    beam: object
    params: SurfacePotentialParams

    @property
    def half_width(self):
        return self.S0 / 2

    @property
    def edge_margin(self):
        """Length excluded at each wall by the quadratures (0 without interaction)."""
        return 0.0 if self.is_free else EDGE_MARGIN_REL * self.S0

    @property
    def is_free(self):
        # a grating of zero thickness has no bar surfaces to interact with
        return self.params.C3 == 0.0 or not np.any(self.kernel.weights)

    def phase(self, s2):
        return self.kernel(s2)

    def __call__(self, s2):
        s2 = np.asarray(s2, dtype=float)
        inside = np.abs(s2) < self.S0 / 2
        out = np.zeros(s2.shape, dtype=complex)
        if self.is_free:
            out[inside] = 1.0
            return out
        out[inside] = np.exp(1j * self.kernel(s2[inside]))
        return out


def transmission_atom(geom, beam, params):
    fr = slit_frame(geom, beam.theta)
    kernel = PhaseKernel.build(geom, beam.theta, beam.speed, params.C3)
    return TransmissionProfile(kernel, fr.S0, geom, beam, params)
