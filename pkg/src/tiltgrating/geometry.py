"""Grating cross section, slit/shadow-line frame and diffraction kinematics.

Coordinates: x1 runs through the grating thickness (downstream positive),
x2 along the period. The incident direction is (cos th', sin th'); all
momenta are expressed as wavenumbers p/hbar in nm^-1 and lengths in nm.

The lower bar of a slit has its upper wall on x2 = x1 tan(beta); the upper
bar's lower wall runs from (0, s0 + 2 t tan(beta)) to (t, s0 + t tan(beta)),
so the slit is s0 wide at the exit face and the bars are wedges that
narrow upstream.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .constants import HELIUM4_MASS_U, speed_from_wavenumber, wavenumber
from .errors import ConfigError, GeometrySingularity, ShadowingError, ValidityError

VALIDITY_GATE = 0.05
VALIDITY_WARN = 0.01
SINGULARITY_EPS = 1e-6


@dataclass(frozen=True)
class GratingGeometry:
    period_d: float
    slit_width_s0: float
    thickness_t: float
    wedge_angle_beta: float
    n_bars: int = 100

    def __post_init__(self):
        d, s0, t, b = self.period_d, self.slit_width_s0, self.thickness_t, self.wedge_angle_beta
        if not (0.0 < s0 < d):
            raise ConfigError(f"need 0 < s0 < d, got s0={s0}, d={d}")
        if t < 0.0:
            raise ConfigError(f"thickness must be non-negative, got {t}")
        if not (0.0 <= b < math.pi / 2):
            raise ConfigError(f"wedge angle must lie in [0, pi/2), got {b}")
        if d - s0 - 2 * t * math.tan(b) <= 0.0:
            raise ConfigError("wedge angle too large: bar front face vanishes")
        if int(self.n_bars) != self.n_bars or self.n_bars < 1:
            raise ConfigError(f"n_bars must be a positive integer, got {self.n_bars}")

    @classmethod
    def standard(cls, n_bars=100):
        """The SiN_x grating used throughout: d=100, s0=60, t=120 nm, beta=6 deg."""
        return cls(100.0, 60.0, 120.0, math.radians(6.0), n_bars)

    @property
    def tan_beta(self):
        return math.tan(self.wedge_angle_beta)

    def bar_polygon(self, shift=0):
        """Vertices (4, 2) of the bar above the reference slit, moved by
        ``shift`` periods along x2. Counter-clockwise order."""
        d, s0, t, tb = self.period_d, self.slit_width_s0, self.thickness_t, self.tan_beta
        poly = np.array(
            [
                [0.0, s0 + 2 * t * tb],
                [t, s0 + t * tb],
                [t, d + t * tb],
                [0.0, d],
            ]
        )
        poly[:, 1] += shift * d
        return poly


@dataclass(frozen=True)
class Beam:
    """Monochromatic beam. ``mass_u`` in atomic mass units, ``speed`` in m/s,
    ``theta`` (incidence angle th') in radians."""

    mass_u: float
    speed: float
    theta: float = 0.0

    def __post_init__(self):
        if self.mass_u <= 0 or self.speed <= 0:
            raise ConfigError("beam mass and speed must be positive")
        if not (-math.pi / 2 < self.theta < math.pi / 2):
            raise ConfigError("incidence angle must lie in (-90, 90) degrees")

    @classmethod
    def helium(cls, speed, theta=0.0):
        return cls(HELIUM4_MASS_U, speed, theta)

    @classmethod
    def from_wavenumber(cls, k, theta=0.0, mass_u=HELIUM4_MASS_U):
        return cls(mass_u, speed_from_wavenumber(mass_u, k), theta)

    @property
    def k(self):
        """|p'|/hbar in nm^-1."""
        return wavenumber(self.mass_u, self.speed)

    @property
    def wavelength(self):
        return 2 * math.pi / self.k

    def with_mass(self, mass_u):
        return Beam(mass_u, self.speed, self.theta)

    def with_speed(self, speed):
        return Beam(self.mass_u, speed, self.theta)

    def with_theta(self, theta):
        return Beam(self.mass_u, self.speed, theta)


def derive_slit_frame(geom):
    """Return (alpha, S0) from cot(alpha) = tan(beta) + s0/t and S0 sin(alpha) = t.

    At t = 0 the thin-grating limit alpha = 0, S0 = s0 is returned.
    """
    t, s0 = geom.thickness_t, geom.slit_width_s0
    if t == 0.0:
        return 0.0, s0
    alpha = math.atan2(1.0, geom.tan_beta + s0 / t)
    return alpha, t / math.sin(alpha)


@dataclass(frozen=True)
class SlitFrame:
    """Slit line for one angle of incidence.

    ``origin`` is the tangent point on the lower bar (s2 = -S0/2), the slit
    line runs along ``s2_hat`` = (sin alpha, cos alpha).
    """

    alpha: float
    S0: float
    theta: float
    origin: tuple
    regime: str

    @property
    def s2_hat(self):
        return np.array([math.sin(self.alpha), math.cos(self.alpha)])

    @property
    def s1_hat(self):
        return np.array([math.cos(self.alpha), -math.sin(self.alpha)])

    @property
    def cos_proj(self):
        """cos(alpha + th'): projection factor of the slit line onto the beam normal."""
        return math.cos(self.alpha + self.theta)

    @property
    def beam_dir(self):
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def beam_normal(self):
        return np.array([-math.sin(self.theta), math.cos(self.theta)])

    def point(self, s2):
        """Grating-frame position of slit coordinate ``s2`` (0 at the slit centre)."""
        s2 = np.asarray(s2, dtype=float)
        o = np.asarray(self.origin)
        return o + (s2[..., None] + self.S0 / 2) * self.s2_hat


def slit_frame(geom, theta):
    """Resolve the slit line for incidence angle ``theta``.

    The line joins the two corners that bound the transmitted beam. For
    theta > beta those are the front corner of the lower bar and the back
    corner of the upper bar (the frame of :func:`derive_slit_frame`); for
    |theta| < beta both sit on the exit face (alpha = 0, S0 = s0); for
    theta < -beta the construction is mirrored.
    """
    t, tb, s0 = geom.thickness_t, geom.tan_beta, geom.slit_width_s0
    if t == 0.0:
        return SlitFrame(0.0, s0, theta, (0.0, 0.0), "thin")
    beta = geom.wedge_angle_beta
    tt = math.tan(theta)
    if abs(tt - tb) < SINGULARITY_EPS or abs(tt + tb) < SINGULARITY_EPS:
        raise GeometrySingularity(
            f"incidence angle {math.degrees(theta):.6f} deg coincides with a wall (beta={math.degrees(beta):.6f} deg)"
        )
    alpha0, S0 = derive_slit_frame(geom)
    if theta > beta:
        return SlitFrame(alpha0, S0, theta, (0.0, 0.0), "tilted")
    if theta < -beta:
        return SlitFrame(-alpha0, S0, theta, (t, t * tb), "tilted-mirror")
    return SlitFrame(0.0, s0, theta, (t, t * tb), "exit-face")


def check_validity(geom, beam, gate=VALIDITY_GATE):
    ratio = beam.wavelength / geom.period_d
    if ratio >= gate:
        raise ValidityError(f"lambda_dB/d = {ratio:.3g} exceeds validity gate {gate}")
    if ratio > VALIDITY_WARN:
        warnings.warn(f"lambda_dB/d = {ratio:.3g} is above {VALIDITY_WARN}", stacklevel=2)


def _require_open(frame):
    c = frame.cos_proj
    if c <= 0.0:
        raise ShadowingError(
            f"slit fully shadowed: cos(alpha+theta') = {c:.3g} at theta' = {math.degrees(frame.theta):.3f} deg"
        )
    return c


@dataclass(frozen=True)
class Kinematics:
    """Per-order kinematics (wavenumber units, nm^-1).

    ``dk_s2`` is the momentum transfer along the slit line, ``k_s1`` and
    ``k_s1_in`` the outgoing and incident components normal to it.
    """

    orders: np.ndarray
    theta_n: np.ndarray
    dk2: np.ndarray
    dk_s2: np.ndarray
    k_s1: np.ndarray
    k_s1_in: float
    k: float
    frame: SlitFrame
    dropped: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.orders)

    def obliquity(self):
        """[(p_s1 + p'_s1) / (2 p'_s1)]^2 per order."""
        return ((self.k_s1 + self.k_s1_in) / (2 * self.k_s1_in)) ** 2


def orders_range(orders):
    if isinstance(orders, tuple) and len(orders) == 2 and all(isinstance(o, (int, np.integer)) for o in orders):
        lo, hi = orders
        return np.arange(lo, hi + 1)
    arr = np.asarray(sorted(set(int(o) for o in orders)), dtype=int)
    if arr.size == 0:
        raise ConfigError("empty order range")
    return arr


def diffraction_angles(geom, beam, orders, gate=VALIDITY_GATE):
    """Diffraction angles and momentum transfers for the requested orders.

    ``orders`` is an iterable of ints or an inclusive ``(lo, hi)`` pair.
    Evanescent orders (|sin th_n| > 1) and orders whose outgoing direction
    points back into the slit line (cos(alpha + th_n) <= 0) are dropped and
    listed in ``dropped``.
    """
    check_validity(geom, beam, gate)
    frame = slit_frame(geom, beam.theta)
    _require_open(frame)
    n = orders_range(orders)
    k = beam.k
    dk2 = n * 2 * math.pi / geom.period_d
    sin_n = math.sin(beam.theta) + dk2 / k
    keep = np.abs(sin_n) <= 1.0
    theta_n = np.arcsin(np.clip(sin_n, -1.0, 1.0))
    keep &= np.cos(frame.alpha + theta_n) > 0.0
    dropped = tuple(int(o) for o in n[~keep])
    n, theta_n, dk2 = n[keep], theta_n[keep], dk2[keep]
    a = frame.alpha
    dk_s2 = k * (np.sin(a + theta_n) - math.sin(a + beam.theta))
    # orders at n = 0 are exact zeros; avoid rounding noise
    dk_s2[n == 0] = 0.0
    return Kinematics(
        orders=n,
        theta_n=theta_n,
        dk2=dk2,
        dk_s2=dk_s2,
        k_s1=k * np.cos(a + theta_n),
        k_s1_in=k * math.cos(a + beam.theta),
        k=k,
        frame=frame,
        dropped=dropped,
    )


class AsymmetryTerms(NamedTuple):
    exact_ratio: float
    quadratic_term_ratio: float


def asymmetry_expansion(geom, beam, n):
    """Compare Delta p_s2 / cos(alpha+th') with its expansion in Delta p_2.

    To second order,
    Delta p_s2 / cos(alpha+th') ~ x/cos(th') + (tan th' - tan(alpha+th')) / (2k) * (x/cos th')^2
    with x = n 2 pi / d. Returns the exact left-hand side (nm^-1) and
    quadratic/linear.
    """
    kin = diffraction_angles(geom, beam, [n])
    if len(kin) == 0:
        raise ConfigError(f"order {n} is not retained")
    fr = kin.frame
    c = fr.cos_proj
    th = beam.theta
    x = n * 2 * math.pi / geom.period_d
    ratio = (math.tan(th) - math.tan(fr.alpha + th)) / (2 * kin.k) * x / math.cos(th)
    return AsymmetryTerms(float(kin.dk_s2[0] / c), float(ratio))


class ProjectedRatios(NamedTuple):
    d_perp: float
    s_perp: float
    ratio: float


def projected_ratios(geom, beam):
    """Period and slit width projected onto the beam normal."""
    frame = slit_frame(geom, beam.theta)
    c = _require_open(frame)
    d_perp = geom.period_d * math.cos(beam.theta)
    s_perp = frame.S0 * c
    return ProjectedRatios(d_perp, s_perp, d_perp / s_perp)


class ShadowLine(NamedTuple):
    length: float
    a2_hat: np.ndarray
    perp: float


def shadow_line(geom, theta):
    """Shadow line of the bar between two neighbouring slit lines.

    Runs from the upper end of one slit line to the lower end of the next,
    A_vec = d e2 - S0 s2_hat. ``perp`` is its projection on the beam normal,
    d cos th' - S0 cos(alpha + th').
    """
    fr = slit_frame(geom, theta)
    vec = np.array([0.0, geom.period_d]) - fr.S0 * fr.s2_hat
    length = float(np.hypot(*vec))
    return ShadowLine(length, vec / length, float(vec @ fr.beam_normal))


def momentum_transfer_vectors(kin):
    """Delta k as (n_orders, 2) grating-frame vectors."""
    th = kin.frame.theta
    k = kin.k
    return k * np.stack([np.cos(kin.theta_n) - math.cos(th), np.sin(kin.theta_n) - math.sin(th)], axis=-1)
