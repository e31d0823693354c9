"""Inverse pipeline: fit cumulant intensities to patterns, turn effective
slit widths into a trimer size, mixed-beam analysis and resolution metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .atom import DiffractionPattern, cumulant_intensity
from .errors import ConfigError, NumericalFailure
from .geometry import diffraction_angles, projected_ratios, slit_frame
from .surface import PhaseKernel
from .trimer import _half_rules, effective_width_vdw_reduced, pattern_trimer_exact

ATOM_PARAMS = ("scale", "S_eff", "Delta", "Gamma", "Sigma")
TRIMER_PARAMS = ATOM_PARAMS + ("Omega",)
START_FRACTIONS = (1.0, 0.8, 0.6)
MAX_NFEV = 2000


@dataclass(frozen=True)
class FitResult:
    params: dict
    stderr: dict
    covariance: np.ndarray
    residual_norm: float
    converged: bool
    kind: str
    n_orders: int
    S0: float
    message: str = ""
    pinned: tuple = ()
    residuals: tuple = ()  # (n, data - model) per order, same units as the fitted data

    def __post_init__(self):
        if not np.isfinite(self.residual_norm):
            raise NumericalFailure("non-finite residual norm")

    @property
    def S_eff(self):
        return self.params["S_eff"]

    def as_dict(self):
        return {
            "kind": self.kind,
            "params": dict(self.params),
            "stderr": dict(self.stderr),
            "covariance": np.asarray(self.covariance).tolist(),
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "n_orders": self.n_orders,
            "S0": self.S0,
            "pinned": list(self.pinned),
            "message": self.message,
            "residuals": [{"n": int(n), "value": float(r)} for n, r in self.residuals],
        }


def _kinematics_for(pattern, geom=None, beam=None):
    geom = geom or pattern.meta.get("geometry")
    beam = beam or pattern.meta.get("beam")
    if geom is None or beam is None:
        raise ConfigError("pattern carries no geometry/beam; pass them explicitly")
    kin = diffraction_angles(geom, beam, pattern.orders)
    if not np.array_equal(kin.orders, pattern.orders):
        raise ConfigError("pattern orders are not all retained for this geometry and beam")
    return kin


def _model(kin, names, values, fixed):
    p = dict(fixed)
    p.update(zip(names, values))
    sig = p["Sigma"]
    return p["scale"] * cumulant_intensity(kin, p["S_eff"], p["Delta"], p["Gamma"], sig * sig, p.get("Omega", 0.0))


def fit_pattern(pattern, kind=None, geom=None, beam=None, counts=None, pin=None, starts=START_FRACTIONS):
    """Weighted least-squares fit of the cumulant intensity formula.

    ``counts`` (same length as the orders) switches to Poisson weights with
    the data taken as counts; otherwise the relative intensities are fitted
    with uniform weights. ``pin`` maps parameter names (Gamma, Omega) to
    fixed values. Atom intensities depend on Delta only through its
    square, so atom fits keep Delta >= 0. Trimer intensities are invariant
    only under the joint flip of Delta and Omega, so Delta is free and
    both start signs are tried. Starts use S_eff = f * S0 for each f in
    ``starts``; the lowest cost is kept.
    """
    kind = kind or pattern.kind
    names_all = TRIMER_PARAMS if kind == "trimer" else ATOM_PARAMS
    pin = dict(pin or {})
    free = [n for n in names_all if n not in pin]
    if len(pattern.orders) < len(free) + 1:
        raise ConfigError(f"need at least {len(free) + 1} orders for {len(free)} free parameters")
    kin = _kinematics_for(pattern, geom, beam)
    S0 = kin.frame.S0
    if counts is not None:
        y = np.asarray(counts, dtype=float)
        sigma = np.sqrt(np.maximum(y, 1.0))
    else:
        y = np.asarray(pattern.intensity, dtype=float)
        sigma = np.ones_like(y)

    delta_lo = -np.inf if kind == "trimer" else 0.0
    lower = {"scale": 0.0, "S_eff": 1e-9 * S0, "Delta": delta_lo, "Gamma": -np.inf, "Sigma": 0.0, "Omega": -np.inf}
    upper = {"scale": np.inf, "S_eff": S0, "Delta": np.inf, "Gamma": np.inf, "Sigma": np.inf, "Omega": np.inf}
    lb = np.array([lower[n] for n in free])
    ub = np.array([upper[n] for n in free])
    y0 = float(y[kin.orders == 0][0]) if np.any(kin.orders == 0) else float(y.max())

    def resid(v):
        return (_model(kin, free, v, pin) - y) / sigma

    best = None
    signs = (-1.0, 1.0) if kind == "trimer" else (1.0,)
    for f, sg in [(f, sg) for f in starts for sg in signs]:
        guess = {"scale": y0, "S_eff": f * S0, "Delta": sg * 0.05 * S0, "Gamma": 0.0, "Sigma": 0.02 * S0, "Omega": 0.0}
        x0 = np.clip([guess[n] for n in free], lb + 1e-12, ub - 1e-12 * S0)
        try:
            r = least_squares(resid, x0, bounds=(lb, ub), method="trf", jac="3-point", diff_step=1e-6, x_scale="jac", max_nfev=MAX_NFEV, xtol=1e-14, ftol=1e-14, gtol=1e-14)
        except ValueError as exc:
            raise NumericalFailure(f"fit failed: {exc}") from exc
        if best is None or r.cost < best.cost:
            best = r
    J = best.jac
    dof = max(len(y) - len(free), 1)
    scale2 = 1.0 if counts is not None else 2 * best.cost / dof
    try:
        cov = np.linalg.pinv(J.T @ J) * scale2
    except np.linalg.LinAlgError:
        cov = np.full((len(free),) * 2, np.nan)
    params = dict(pin)
    params.update(zip(free, map(float, best.x)))
    stderr = {n: float(math.sqrt(max(cov[i, i], 0.0))) for i, n in enumerate(free)}
    stderr.update({n: 0.0 for n in pin})
    return FitResult(
        params={n: params[n] for n in names_all},
        stderr={n: stderr[n] for n in names_all},
        covariance=cov,
        residual_norm=float(np.sqrt(2 * best.cost)),
        converged=bool(best.success),
        kind=kind,
        n_orders=len(y),
        S0=S0,
        message=str(best.message),
        pinned=tuple(sorted(pin)),
        residuals=tuple(zip(kin.orders.tolist(), (-best.fun * sigma).tolist())),
    )


@dataclass(frozen=True)
class SizeEstimate:
    mean_r: float
    uncertainty: float
    method: str
    residuals: tuple = ()
    velocities: tuple = ()

    def __post_init__(self):
        if not self.mean_r > 0:
            raise NumericalFailure(f"non-positive size estimate {self.mean_r}")

    def as_dict(self):
        return {
            "mean_r_nm": self.mean_r,
            "uncertainty_nm": self.uncertainty,
            "method": self.method,
            "residuals_nm": list(self.residuals),
            "velocities_m_s": list(self.velocities),
        }


class ReducedWidthModel:
    """S_eff(<r>) = S_eff_geom + reduced vdW part, one fixed rule per beam."""

    def __init__(self, geom, beam, atom_params):
        self.geom, self.beam, self.atom_params = geom, beam, atom_params
        self.frame = slit_frame(geom, beam.theta)
        self.kernel = PhaseKernel.build(geom, beam.theta, beam.speed, atom_params.C3)
        self.rules = _half_rules(self.kernel) if atom_params.C3 > 0 else None

    def __call__(self, mean_r):
        S_geom = self.frame.S0 - 0.75 * mean_r / self.frame.cos_proj
        if self.rules is None:
            return S_geom
        return S_geom + effective_width_vdw_reduced(self.geom, self.beam, self.atom_params, mean_r, self.kernel, self.rules)


def extract_size(S_eff_values, geom, beams, atom_params, errors=None, method=None):
    """Pair distance <r> from effective slit widths measured at several beams.

    geom-only: closed-form inversion of S_eff = S0 - (3/4)<r>/cos(alpha+th')
    averaged over the inputs; used when C3 = 0. geom+vdw-reduced: one
    parameter least squares with the reduced vdW form, needs at least two
    velocities.
    """
    S = np.atleast_1d(np.asarray(S_eff_values, dtype=float))
    beams = list(beams) if isinstance(beams, (list, tuple)) else [beams]
    if len(beams) != S.size:
        raise ConfigError("one beam per effective width is required")
    frames = [slit_frame(geom, b.theta) for b in beams]
    for s, fr in zip(S, frames):
        if s > fr.S0:
            raise ConfigError(f"effective width {s} exceeds the slit-line length {fr.S0}")
    if method is None:
        method = "geom-only" if atom_params.C3 == 0 else "geom+vdw-reduced"
    vel = tuple(float(b.speed) for b in beams)
    if method == "geom-only":
        r_each = np.array([4.0 / 3.0 * (fr.S0 - s) * fr.cos_proj for s, fr in zip(S, frames)])
        mr = float(r_each.mean())
        unc = float(r_each.std(ddof=1) / math.sqrt(S.size)) if S.size > 1 else 0.0
        if errors is not None:
            e = np.asarray(errors, dtype=float) * [4.0 / 3.0 * fr.cos_proj for fr in frames]
            unc = max(unc, float(np.sqrt((e**2).sum()) / S.size))
        return SizeEstimate(mr, unc, method, tuple(r_each - mr), vel)
    if method != "geom+vdw-reduced":
        raise ConfigError(f"unknown extraction method {method!r}")
    if S.size < 2:
        raise ConfigError("the vdW-corrected extraction needs at least two velocities")
    models = [ReducedWidthModel(geom, b, atom_params) for b in beams]
    w = 1.0 / np.asarray(errors, dtype=float) if errors is not None else np.ones_like(S)

    def resid(x):
        return w * (np.array([m(x[0]) for m in models]) - S)

    # starting point from the geometric inversion of the fastest beam
    i = int(np.argmax(vel))
    x0 = max(4.0 / 3.0 * (frames[i].S0 - S[i]) * frames[i].cos_proj * 0.5, 0.05)
    r = least_squares(resid, [x0], bounds=([1e-6], [np.inf]), jac="3-point", diff_step=1e-6, xtol=1e-12, ftol=1e-12)
    jtj = float((r.jac.T @ r.jac).item())
    dof = max(S.size - 1, 1)
    s2 = 1.0 if errors is not None else 2 * r.cost / dof
    unc = math.sqrt(s2 / jtj) if jtj > 0 else float("nan")
    res = tuple(float(x) for x in (resid(r.x) / w))
    return SizeEstimate(float(r.x[0]), unc, method, res, vel)


def default_velocities(n=5, lo=200.0, hi=1200.0):
    return np.geomspace(lo, hi, n)


def absolute_intensities(pattern):
    """Unnormalized intensities obliquity * |a|^2 stored by the trimer forward model."""
    return np.asarray(pattern.meta["absolute_intensity"])


def _pure_patterns(geom, beams, atom_params, model, orders, count, seed):
    out = []
    for b in beams:
        p = pattern_trimer_exact(geom, b, atom_params, model, orders, count=count, seed=seed)
        out.append(p)
    return out


@dataclass(frozen=True)
class MixedBeamRow:
    w_ground: float
    S_eff: tuple
    apparent_mean_r: float
    uncertainty: float


def mix_patterns(p_ground, p_excited, w):
    """Incoherent population-weighted sum of two pure-state patterns, relative to n = 0."""
    Ig, Ie = absolute_intensities(p_ground), absolute_intensities(p_excited)
    if not np.array_equal(p_ground.orders, p_excited.orders):
        raise ConfigError("pure-state patterns must share their orders")
    mix = w * Ig + (1 - w) * Ie
    zero = p_ground.orders == 0
    rel = mix / mix[zero][0]
    meta = dict(p_ground.meta)
    meta["w_ground"] = w
    return DiffractionPattern(p_ground.orders, p_ground.theta_n, p_ground.dk_s2, rel, "exact", "trimer", None, meta)


def mixed_beam_analysis(w_grid, geom, beams, atom_params, ground_model, excited_model, orders=(-10, 10), count=None, seed=0, pin=None):
    """Apparent effective widths and <r> of a two-state beam over a grid of ground fractions.

    The apparent <r> is the value a pure-beam analysis of the mixed
    pattern would report.
    """
    from .trimer import DEFAULT_MC_COUNT

    count = count or DEFAULT_MC_COUNT
    for w in w_grid:
        if not 0.0 <= w <= 1.0:
            raise ConfigError(f"ground fraction {w} outside [0, 1]")
    pg = _pure_patterns(geom, beams, atom_params, ground_model, orders, count, seed)
    pe = _pure_patterns(geom, beams, atom_params, excited_model, orders, count, seed)
    rows = []
    for w in w_grid:
        fits = [fit_pattern(mix_patterns(a, b, w), "trimer", geom, beam, pin=pin) for a, b, beam in zip(pg, pe, beams)]
        S = [f.S_eff for f in fits]
        est = extract_size(S, geom, beams, atom_params, errors=fit_errors(fits))
        rows.append(MixedBeamRow(float(w), tuple(S), est.mean_r, est.uncertainty))
    return rows


@dataclass(frozen=True)
class ResolutionMetrics:
    n_c: float
    sensitivity: float


def resolution_metrics(geom, beam, mean_r):
    """n_c = d_perp/s_perp with s_perp from the geometric effective width,
    and (dn_c/d<r>)/n_c = (3/4)/(S_eff_geom cos(alpha + th'))."""
    pr = projected_ratios(geom, beam)
    fr = slit_frame(geom, beam.theta)
    S_geom = fr.S0 - 0.75 * mean_r / fr.cos_proj
    if S_geom <= 0:
        raise ConfigError("trimer wider than the slit")
    s_perp = S_geom * fr.cos_proj
    return ResolutionMetrics(pr.d_perp / s_perp, 0.75 / s_perp)


def synthetic_size_pipeline(geom, theta, atom_params, model, velocities=None, orders=(-10, 10), count=None, seed=0, pin=None):
    """Forward model at several velocities, fit each pattern, extract <r>.

    Returns (SizeEstimate, list of FitResult).
    """
    from .geometry import Beam
    from .trimer import DEFAULT_MC_COUNT

    count = count or DEFAULT_MC_COUNT
    velocities = default_velocities() if velocities is None else velocities
    beams = [Beam(model.total_mass, float(v), theta) for v in velocities]
    fits = []
    for b in beams:
        pat = pattern_trimer_exact(geom, b, atom_params, model, orders, count=count, seed=seed)
        fits.append(fit_pattern(pat, "trimer", geom, b, pin=pin))
    est = extract_size([f.S_eff for f in fits], geom, beams, atom_params, errors=fit_errors(fits))
    return est, fits


def fit_errors(fits):
    """S_eff standard errors of a set of fits, or None if any is zero
    (noiseless exact fits), in which case the size fit is unweighted."""
    e = [f.stderr["S_eff"] for f in fits]
    return e if all(x > 0 for x in e) else None
