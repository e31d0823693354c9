"""Three-body Jacobi coordinates and Bose-symmetric model bound states.

Coordinates for the cyclic permutation (ijk):

    R        = (m_i r_i + m_j r_j + m_k r_k) / M
    rho^(i)  = r_i - (m_j r_j + m_k r_k) / (m_j + m_k)
    r^(jk)   = r_j - r_k

The model densities stand in for real trimer wave functions. Both are
functions of the three pair distances only, so they are symmetric under
relabelling and isotropic:

``gaussian``     exp(-sum r_ab^2 / (2 sigma^2))
``exponential``  exp(-(r_12 + r_23 + r_31) / sigma)

Each has an analytic map between its size scale and <r> = <|r^(23)|>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import HELIUM4_MASS_U
from .errors import ConfigError

CYCLIC = ((1, 2, 3), (2, 3, 1), (3, 1, 2))
FAMILIES = ("gaussian", "exponential")

# pair-distance expectation values quoted for the two He_3 states (nm)
HE3_GROUND_MEAN_R = 0.96
HE3_EXCITED_MEAN_R = 7.97


def _cyclic_from(i):
    for p in CYCLIC:
        if p[0] == i:
            return p
    raise ConfigError(f"no cyclic permutation starts with {i}")


@dataclass(frozen=True)
class JacobiFrame:
    masses: tuple = (HELIUM4_MASS_U,) * 3
    perm: tuple = (1, 2, 3)

    def __post_init__(self):
        if tuple(self.perm) not in CYCLIC:
            raise ConfigError(f"permutation must be one of {CYCLIC}, got {self.perm}")
        if len(self.masses) != 3 or min(self.masses) <= 0:
            raise ConfigError("need three positive masses")

    def m(self, idx):
        return self.masses[idx - 1]

    def position_matrix(self):
        """3x3 coefficients mapping (r_i, r_j, r_k) to (R, rho^(i), r^(jk))."""
        i, j, k = self.perm
        mi, mj, mk = self.m(i), self.m(j), self.m(k)
        M = mi + mj + mk
        return np.array(
            [
                [mi / M, mj / M, mk / M],
                [1.0, -mj / (mj + mk), -mk / (mj + mk)],
                [0.0, 1.0, -1.0],
            ]
        )

    def to_jacobi(self, positions):
        """``positions`` (..., 3 atoms, 3) in atom order 1, 2, 3 -> (..., 3, 3) rows (R, rho, r)."""
        pos = np.asarray(positions, dtype=float)
        ordered = pos[..., [p - 1 for p in self.perm], :]
        return np.einsum("ab,...bc->...ac", self.position_matrix(), ordered)


def jacobi_matrix(masses, i):
    """Block coefficients of J^(ji): frame (i, jk) -> frame (j, ki), (ijk) cyclic."""
    _, j, k = _cyclic_from(i)
    mi, mj, mk = (masses[x - 1] for x in (i, j, k))
    M = mi + mj + mk
    return np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, -mi / (mi + mk), mk * M / ((mj + mk) * (mk + mi))],
            [0.0, -1.0, -mj / (mj + mk)],
        ]
    )


def jacobi_matrix_full(masses, i):
    """The 9x9 matrix acting on stacked 3-vectors (R, rho, r)."""
    return np.kron(jacobi_matrix(masses, i), np.eye(3))


def jacobi_transform(frame, target, coords):
    """Map (R, rho, r) given in ``frame`` to the frame whose permutation is ``target``.

    ``coords`` has shape (..., 3, 3) with rows R, rho, r. Steps through the
    cyclic chain (123) -> (231) -> (312) as needed; R is never changed.
    """
    target = tuple(target)
    if target not in CYCLIC:
        raise ConfigError(f"target permutation must be one of {CYCLIC}")
    out = np.asarray(coords, dtype=float)
    cur = tuple(frame.perm)
    while cur != target:
        J = jacobi_matrix(frame.masses, cur[0])
        out = np.einsum("ab,...bc->...ac", J, out)
        cur = _cyclic_from(cur[1])
    return out


def _pair_form(masses):
    """Q such that sum of squared pair distances = (rho, r) Q (rho, r)^T."""
    m1, m2, m3 = masses
    a, b = m3 / (m2 + m3), m2 / (m2 + m3)
    return np.array([[2.0, b - a], [b - a, 1.0 + a * a + b * b]])


SQRT2 = math.sqrt(2.0)
MAXWELL_MEAN = math.sqrt(8.0 / math.pi)  # <|x|>/s for an isotropic 3D normal of per-axis std s


@dataclass(frozen=True)
class TrimerWaveModel:
    family: str
    sigma: float
    masses: tuple = (HELIUM4_MASS_U,) * 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unsupported model family {self.family!r}; choose from {FAMILIES}")
        if not (self.sigma >= 0.0):
            raise ConfigError("size scale must be non-negative")

    @property
    def total_mass(self):
        return float(sum(self.masses))

    @property
    def mean_r(self):
        """Analytic <|r^(23)|>.

        Gaussian: the density in relative coordinates is a centred normal
        with covariance sigma^2 Q^-1 (Q from :func:`_pair_form`), and the
        r block is (2/3) sigma^2 for any masses because pair distances are
        exchangeable. Exponential: the sum of pair distances h is
        Gamma(6, sigma) distributed (the density is homogeneous of degree
        one in six dimensions), r/h is independent of h with mean 1/3, so
        <r> = 2 sigma.
        """
        if self.family == "gaussian":
            return self.sigma * math.sqrt(2.0 / 3.0) * MAXWELL_MEAN
        return 2.0 * self.sigma

    @property
    def covariance(self):
        """Gaussian family: 2x2 covariance (per Cartesian axis) of (rho, r)."""
        return self.sigma**2 * np.linalg.inv(_pair_form(self.masses))

    def frame(self):
        return JacobiFrame(self.masses, (1, 2, 3))

    def density_unnormalized(self, rho, r):
        rho = np.asarray(rho, dtype=float)
        r = np.asarray(r, dtype=float)
        d = pair_distances(self.masses, rho, r)
        if self.family == "gaussian":
            return np.exp(-(d**2).sum(-1) / (2 * self.sigma**2))
        return np.exp(-d.sum(-1) / self.sigma)

    def normalization(self):
        """Integral of the unnormalized density over d^3rho d^3r."""
        if self.family == "gaussian":
            C = self.covariance
            return (2 * math.pi) ** 3 * np.linalg.det(C) ** 1.5
        # volume of {h < 1} times Gamma(7) sigma^6, with the volume from MC-free
        # scaling: integral exp(-h/sigma) = 6! sigma^6 vol{h<1}
        return math.factorial(6) * self.sigma**6 * _unit_ball_volume_pairsum(self.masses)


def _unit_ball_volume_pairsum(masses, n=400_000, seed=12345):
    """Volume of {r12 + r23 + r31 < 1} in (rho, r) space, by MC inside the
    enclosing Euclidean ball |x| < 1 of the pair-form metric."""
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(np.linalg.inv(_pair_form(masses)))
    g = rng.standard_normal((n, 6))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = rng.random(n) ** (1 / 6)
    x = g * rad[:, None]
    rho = x[:, :3] * L[0, 0]
    r = x[:, :3] * L[1, 0] + x[:, 3:] * L[1, 1]
    h = pair_distances(masses, rho, r).sum(-1)
    ball = math.pi**3 / 6 * np.linalg.det(L) ** 3
    return ball * float(np.mean(h < 1))


def pair_distances(masses, rho, r):
    """(r_12, r_23, r_31) lengths from rho = rho^(1), r = r^(23)."""
    m1, m2, m3 = masses
    a, b = m3 / (m2 + m3), m2 / (m2 + m3)
    r12 = rho - a * r
    r31 = -rho - b * r
    return np.stack(
        [np.linalg.norm(r12, axis=-1), np.linalg.norm(r, axis=-1), np.linalg.norm(r31, axis=-1)],
        axis=-1,
    )


def make_model(family="gaussian", masses=None, target_mean_r=HE3_GROUND_MEAN_R):
    if not (target_mean_r > 0):
        raise ConfigError("target <r> must be positive")
    masses = tuple(masses) if masses is not None else (HELIUM4_MASS_U,) * 3
    if family == "gaussian":
        sigma = target_mean_r / (math.sqrt(2.0 / 3.0) * MAXWELL_MEAN)
    elif family == "exponential":
        sigma = target_mean_r / 2.0
    else:
        raise ConfigError(f"unsupported model family {family!r}; choose from {FAMILIES}")
    return TrimerWaveModel(family, sigma, masses)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.PCG64(ss))


def _sample_gaussian(model, rng, count):
    L = np.linalg.cholesky(model.covariance)
    z = rng.standard_normal((2, count, 3))
    rho = L[0, 0] * z[0]
    r = L[1, 0] * z[0] + L[1, 1] * z[1]
    return rho, r


def _sample_exponential(model, rng, count):
    # propose exp(-sqrt2 |x|/sigma) in the pair-form metric, |x|^2 being the
    # sum of squared pair distances. For triangle sides sum d^2 <= 2 sum d_a d_b,
    # hence h >= sqrt2 |x| and exp(-(h - sqrt2 |x|)/sigma) is a valid acceptance.
    L = np.linalg.cholesky(np.linalg.inv(_pair_form(model.masses)))
    out_rho, out_r = [], []
    have = 0
    while have < count:
        m = max(1024, int(1.3 * (count - have) / 0.35))
        g = rng.standard_normal((m, 6))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rad = rng.gamma(6.0, model.sigma / SQRT2, m)
        x = g * rad[:, None]
        rho = x[:, :3] * L[0, 0]
        r = x[:, :3] * L[1, 0] + x[:, 3:] * L[1, 1]
        h = pair_distances(model.masses, rho, r).sum(-1)
        keep = rng.random(m) < np.exp(-(h - SQRT2 * rad) / model.sigma)
        out_rho.append(rho[keep])
        out_r.append(r[keep])
        have += int(keep.sum())
    return np.concatenate(out_rho)[:count], np.concatenate(out_r)[:count]


def sample_relative(model, seed, count):
    """i.i.d. samples (rho, r), each (count, 3), deterministic for a fixed seed."""
    if count < 1:
        raise ConfigError("count must be at least 1")
    rng = _rng(seed)
    if model.sigma == 0.0:
        z = np.zeros((count, 3))
        return z, z.copy()
    if model.family == "gaussian":
        return _sample_gaussian(model, rng, count)
    return _sample_exponential(model, rng, count)


def pair_vectors(masses, rho, r):
    """r^(23), r^(31), r^(12) from the (123) Jacobi vectors."""
    m1, m2, m3 = masses
    a, b = m3 / (m2 + m3), m2 / (m2 + m3)
    return r, -rho - b * r, rho - a * r


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    count: int


def projected_pair_width(model, seed=0, count=200_000, pair="23"):
    """<|r_perp|> for one Cartesian component of the chosen pair vector."""
    rho, r = sample_relative(model, seed, count)
    vecs = dict(zip(("23", "31", "12"), pair_vectors(model.masses, rho, r)))
    x = np.abs(vecs[pair][:, 0])
    return MCEstimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(count)), count)


def hyperradius(masses, rho, r, mu0_ratio=0.5):
    """R with mu0 R^2 = mu_rho rho^2 + mu_r r^2; ``mu0_ratio`` = mu0/m1.

    For three equal masses mu_rho = 2m/3 and mu_r = m/2.
    """
    m1, m2, m3 = masses
    M = m1 + m2 + m3
    mu_rho = m1 * (m2 + m3) / M
    mu_r = m2 * m3 / (m2 + m3)
    mu0 = mu0_ratio * m1
    return np.sqrt((mu_rho * (rho**2).sum(-1) + mu_r * (r**2).sum(-1)) / mu0)


@dataclass(frozen=True)
class HyperradialDensity:
    R: np.ndarray
    P: np.ndarray
    mean_R: float
    mu0_ratio: float

    def norm(self):
        return float(np.trapezoid(self.P, self.R)) if hasattr(np, "trapezoid") else float(np.trapz(self.P, self.R))


def hyperradial_density(model, mu0_ratio=0.5, grid=None, seed=0, count=200_000):
    """Histogram estimate of P(R) on bin edges ``grid`` (default: 200 bins to the 99.9% quantile)."""
    if mu0_ratio <= 0:
        raise ConfigError("mu0 must be positive")
    rho, r = sample_relative(model, seed, count)
    R = hyperradius(model.masses, rho, r, mu0_ratio)
    if grid is None:
        grid = np.linspace(0.0, float(np.quantile(R, 0.999)) * 1.2 + 1e-12, 201)
    grid = np.asarray(grid, dtype=float)
    counts, edges = np.histogram(R, bins=grid)
    widths = np.diff(edges)
    P = counts / (count * widths)
    centres = (edges[:-1] + edges[1:]) / 2
    return HyperradialDensity(centres, P, float(R.mean()), mu0_ratio)
