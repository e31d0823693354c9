"""Atom diffraction from the deep grating: slit function, exact and
cumulant-approximated intensities.

Momenta are wavenumbers (nm^-1). The slit function is
a(k) = integral over the slit line of exp(-i k s2) tau(s2) ds2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure
from .geometry import diffraction_angles, slit_frame
from .quadrature import adaptive_rule, graded_breaks
from .surface import transmission_atom

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL_REL = 1e-8


def grating_function(N, dk2, d):
    """H_N = sin(N x)/sin(x) with x = dk2 d / 2; the limit N cos(N x)/cos(x) is used at x = m pi."""
    x = np.asarray(dk2, dtype=float) * d / 2
    s = np.sin(x)
    near = np.abs(s) < 1e-12
    safe = np.where(near, 1.0, s)
    return np.where(near, N * np.cos(N * x) / np.cos(x), np.sin(N * x) / safe)


def bar_shape(A, dk_a2):
    """sin(dk A/2)/(dk/2), the single-bar (and Kirchhoff slit) profile."""
    dk_a2 = np.asarray(dk_a2, dtype=float)
    return A * np.sinc(dk_a2 * A / (2 * math.pi))


def single_bar_amplitude(beam, A, dk_a2, k_a1_sum):
    """Transition amplitude of one bar with shadow line of length ``A``.

    ``k_a1_sum`` is (p_a1 + p'_a1)/hbar, the momentum components normal to
    the shadow line. Returned in units where hbar = 1 and the mass enters
    as m/hbar (s nm^-2), i.e. nm/s.
    """
    if A <= 0:
        raise ValueError("shadow line length must be positive")
    from .constants import AMU_KG, HBAR_J_S

    m_over_hbar = beam.mass_u * AMU_KG / HBAR_J_S * 1e-18
    pref = -0.5j * np.asarray(k_a1_sum) / ((2 * math.pi) ** 2 * m_over_hbar)
    return pref * bar_shape(A, dk_a2)


@dataclass(frozen=True)
class CumulantSet:
    """First two edge cumulants on each side of the slit and the derived
    effective-width parameters."""

    R1_plus: complex
    R1_minus: complex
    R2_plus: complex
    R2_minus: complex
    S0: float

    @property
    def S_eff(self):
        return self.S0 - (self.R1_plus + self.R1_minus).real

    @property
    def Delta(self):
        return (self.R1_plus + self.R1_minus).imag

    @property
    def Gamma(self):
        return (self.R1_plus - self.R1_minus).imag

    @property
    def sigma_sq(self):
        """Sigma^2 = Re(R2+ + R2-)/2. Kept signed; the intensity formula needs only the square."""
        return 0.5 * (self.R2_plus + self.R2_minus).real

    @property
    def Sigma(self):
        return math.sqrt(self.sigma_sq) if self.sigma_sq >= 0 else float("nan")

    @property
    def Omega(self):
        return 0.5 * (self.R2_plus - self.R2_minus).imag

    def summary(self):
        return {
            "S_eff": self.S_eff,
            "Delta": self.Delta,
            "Gamma": self.Gamma,
            "sigma_sq": self.sigma_sq,
            "Omega": self.Omega,
        }

    @classmethod
    def from_moments(cls, S0, int_plus, int_minus, mom_plus, mom_minus, tau0=1.0):
        """Build from the half-slit integrals of tau (int_*) and of xi * tau
        (mom_*), xi being the distance from the wall.

        The integrals are divided by the transmission at the slit centre
        ``tau0`` so that each edge characteristic function is 1 at zero
        momentum. Pass tau0=1 for the unnormalized moments.
        """
        h = S0 / 2
        int_plus, int_minus = int_plus / tau0, int_minus / tau0
        mom_plus, mom_minus = mom_plus / tau0, mom_minus / tau0
        R1p = h - int_plus
        R1m = h - int_minus
        R2p = h * h - R1p * R1p - 2 * mom_plus
        R2m = h * h - R1m * R1m - 2 * mom_minus
        return cls(complex(R1p), complex(R1m), complex(R2p), complex(R2m), S0)

    @classmethod
    def free(cls, S0):
        return cls(0j, 0j, 0j, 0j, S0)


@dataclass(frozen=True)
class DiffractionPattern:
    orders: np.ndarray
    theta_n: np.ndarray
    dk_s2: np.ndarray
    intensity: np.ndarray
    method: str
    kind: str = "atom"
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.intensity < 0):
            raise NumericalFailure("negative intensity")

    def __len__(self):
        return len(self.orders)

    def at(self, n):
        i = int(np.nonzero(self.orders == n)[0][0])
        return float(self.intensity[i])


def sinhc(y):
    """sinh(y)/y with the series near 0."""
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < 1e-4
    safe = np.where(small, 1.0, y)
    return np.where(small, 1 + y * y / 6, np.sinh(safe) / safe)


def _atom_integrand(profile, ks):
    """Components: tau e^{-iks} for each k, then tau and (S0/2-|s|) tau on each half."""
    h = profile.S0 / 2

    def f(s):
        tau = profile(s)
        ph = np.exp(-1j * np.outer(ks, s)) * tau
        pos = s > 0
        xi = h - np.abs(s)
        extra = np.vstack(
            [
                np.where(pos, tau, 0),
                np.where(pos, 0, tau),
                np.where(pos, xi * tau, 0),
                np.where(pos, 0, xi * tau),
            ]
        )
        return np.vstack([ph, extra])

    return f


def slit_breaks(profile, margin=None, inner=None):
    """Panel breaks on the slit line between the integration limits.

    ``margin`` is the fixed exclusion at each wall, ``inner`` the distance
    from each wall (lower, upper) where the adaptive region starts.
    """
    h = profile.S0 / 2
    eps = profile.edge_margin if margin is None else margin
    lo_c, hi_c = (eps, eps) if inner is None else inner
    return graded_breaks(-h + lo_c, h - hi_c, lo_c, hi_c, interior=(0.0,))


STRIP_GRID = 400
STRIP_TOL_FRACTION = 0.01
STRIP_MAX_FRACTION = 0.25  # of the half width


def _strip_terms(profile, ks, side, xi_a, xi_b):
    """Two-step integration-by-parts evaluation of the wall strip between
    distances xi_a < xi_b from one wall, for every integrand component.

    Returns (values, remainder_bound); the bound is the integral of
    |d/ds (g/psi')|, estimated as the total variation of
    q = g/psi' on a fine grid, which bounds the neglected remainder.
    """
    h = profile.S0 / 2
    kern = profile.kernel
    xi = np.geomspace(xi_a, xi_b, STRIP_GRID)
    s = side * (h - xi)
    phi, d1, d2 = kern.derivatives(s)
    nk = ks.size
    # rows: one per k (f = 1, psi = phi - k s), then the four half-slit moments
    psi1 = np.vstack([d1 - k for k in ks] + [d1] * 4)
    psi = np.vstack([phi - k * s for k in ks] + [phi] * 4)
    f = np.ones_like(psi1)
    fp = np.zeros_like(psi1)
    on_side = np.ones(nk + 4, dtype=bool)
    # moments: tau on (s > 0), tau on (s < 0), xi tau on (s > 0), xi tau on (s < 0)
    pos = side > 0
    on_side[nk:] = [pos, not pos, pos, not pos]
    f[nk + 2 :] = xi
    fp[nk + 2 :] = side * -1.0  # d(xi)/ds
    g = fp / psi1 - f * d2 / psi1**2
    q = g / psi1
    bound = np.abs(np.diff(q, axis=1)).sum(axis=1)
    term = np.exp(1j * psi) * (f / (1j * psi1) + g / psi1)
    # the grid runs from the wall inward: index 0 is the wall end
    if side > 0:
        val = term[:, 0] - term[:, -1]
    else:
        val = term[:, -1] - term[:, 0]
    val = np.where(on_side, val, 0.0)
    bound = np.where(on_side, bound, 0.0)
    return val, bound


def wall_strips(profile, ks, atol):
    """Distance from each wall (lower, upper) where the adaptive region starts,
    and the asymptotic contribution of the strips between the fixed margin
    and that distance.

    Close to a wall the phase derivative grows like xi^-3; once it is large
    the strip integral follows from its end points to far better than
    ``atol``. The strip is widened in factors of two while the remainder
    bound stays below STRIP_TOL_FRACTION * atol.
    """
    eps = profile.edge_margin
    n = ks.size + 4
    if profile.is_free or eps <= 0:
        return (eps, eps), np.zeros(n, dtype=complex)
    h = profile.S0 / 2
    tol = STRIP_TOL_FRACTION * atol
    inner = []
    total = np.zeros(n, dtype=complex)
    for side in (-1.0, 1.0):
        best = None
        xi = 2 * eps
        while xi <= STRIP_MAX_FRACTION * h:
            # non-finite bounds (phase derivative underflowing to 0) mean no strip
            with np.errstate(divide="ignore", invalid="ignore"):
                val, bound = _strip_terms(profile, ks, side, eps, xi)
            if not np.all(np.isfinite(bound)) or bound.max() > tol:
                break
            best = (xi, val)
            xi *= 2
        if best is None:
            inner.append(eps)
        else:
            inner.append(best[0])
            total += best[1]
    return tuple(inner), total


def slit_integrals(profile, ks, rtol=DEFAULT_RTOL, atol=None, strips=True):
    """Slit function at each wavenumber in ``ks`` plus the half-slit moments
    used by the cumulants. Returns (a(ks), moments[4], rule).

    With ``strips`` the rapidly oscillating layers next to the walls are
    evaluated asymptotically (see :func:`wall_strips`) and only the rest
    goes to the adaptive rule; both routes integrate the same interval.
    """
    ks = np.atleast_1d(np.asarray(ks, dtype=float))
    atol = DEFAULT_ATOL_REL * profile.S0 if atol is None else atol
    if strips:
        inner, extra = wall_strips(profile, ks, atol)
    else:
        eps = profile.edge_margin
        inner, extra = (eps, eps), 0.0
    rule = adaptive_rule(_atom_integrand(profile, ks), slit_breaks(profile, inner=inner), atol=atol, rtol=rtol)
    vals = rule.integral + extra
    return vals[: ks.size], vals[ks.size :], rule


def slit_function_exact(profile, dk_s2, D=None, rtol=DEFAULT_RTOL, atol=None):
    """a(dk_s2) by adaptive quadrature over [-S0/2, S0/2].

    ``D`` (= d dp2/dp_s2) only bounds the domain; tau vanishes outside the
    slit so any D >= S0 gives the same value.
    """
    if D is not None and D < profile.S0 * (1 - 1e-12):
        raise ValueError(f"integration bound D={D} smaller than S0={profile.S0}")
    a, _, _ = slit_integrals(profile, [dk_s2], rtol=rtol, atol=atol)
    return complex(a[0])


def integration_bound(geom, kin):
    """D = d dp2/dp_s2 per order, with the dp_s2 -> 0 limit d cos th'/cos(alpha+th')."""
    lim = geom.period_d * math.cos(kin.frame.theta) / kin.frame.cos_proj
    with np.errstate(divide="ignore", invalid="ignore"):
        D = geom.period_d * kin.dk2 / kin.dk_s2
    return np.where(kin.dk_s2 == 0, lim, D)


def center_transmission(profile):
    return complex(profile(np.array([0.0]))[0])


def cumulants(profile, rtol=DEFAULT_RTOL, atol=None, normalize=True):
    _, mom, _ = slit_integrals(profile, [0.0], rtol=rtol, atol=atol)
    tau0 = center_transmission(profile) if normalize else 1.0
    return CumulantSet.from_moments(profile.S0, *mom, tau0=tau0)


def _meta(geom, beam, params, kin, extra=None):
    m = {
        "geometry": geom,
        "beam": beam,
        "C3": params.C3 if params is not None else None,
        "alpha": kin.frame.alpha,
        "S0": kin.frame.S0,
        "regime": kin.frame.regime,
        "dropped_orders": kin.dropped,
    }
    if extra:
        m.update(extra)
    return m


def pattern_from_slit_function(kin, a_orders, a_zero, method, kind="atom", meta=None, stderr=None):
    """I_n/I_0 = obliquity * |a(dk_n)|^2 / |a(0)|^2."""
    inten = kin.obliquity() * np.abs(a_orders) ** 2 / abs(a_zero) ** 2
    inten = np.where(kin.orders == 0, 1.0, inten)
    return DiffractionPattern(kin.orders, kin.theta_n, kin.dk_s2, inten, method, kind, stderr, meta or {})


def pattern_exact(geom, beam, params, orders, rtol=DEFAULT_RTOL, return_cumulants=False):
    """Exact far-field pattern relative to the zeroth order."""
    kin = diffraction_angles(geom, beam, orders)
    prof = transmission_atom(geom, beam, params)
    ks = np.append(kin.dk_s2, 0.0)
    a, mom, rule = slit_integrals(prof, ks, rtol=rtol)
    meta = _meta(geom, beam, params, kin, {"quad_panels": rule.n_panels, "edge_margin": prof.edge_margin})
    pat = pattern_from_slit_function(kin, a[:-1], a[-1], "exact", meta=meta)
    if return_cumulants:
        return pat, CumulantSet.from_moments(prof.S0, *mom, tau0=center_transmission(prof))
    return pat


def cumulant_intensity(kin, S_eff, Delta, Gamma, sigma_sq, Omega=0.0):
    """Two-term cumulant intensity relative to n = 0 for the orders in ``kin``."""
    k = kin.dk_s2
    norm = S_eff**2 + Delta**2
    env = np.exp(-(k**2) * sigma_sq - Gamma * k)
    sin_part = (S_eff * np.sinc(k * S_eff / (2 * math.pi))) ** 2
    y = (k * Delta + k**2 * Omega) / 2
    sinh_part = ((Delta + k * Omega) * sinhc(y)) ** 2
    return kin.obliquity() * env * (sin_part + sinh_part) / norm


def pattern_cumulant(geom, beam, cums, orders, kind="atom", kin=None, meta=None):
    kin = diffraction_angles(geom, beam, orders) if kin is None else kin
    inten = cumulant_intensity(kin, cums.S_eff, cums.Delta, cums.Gamma, cums.sigma_sq, cums.Omega if kind == "trimer" else 0.0)
    m = {"geometry": geom, "beam": beam, "alpha": kin.frame.alpha, "S0": kin.frame.S0, "dropped_orders": kin.dropped, "cumulants": cums.summary()}
    if meta:
        m.update(meta)
    return DiffractionPattern(kin.orders, kin.theta_n, kin.dk_s2, inten, "cumulant", kind, None, m)


