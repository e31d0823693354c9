"""Trimer diffraction: transmission function averaged over the bound state,
elastic intensities, cumulants and the effective-slit-width decomposition.

The trimer transmission at centre-of-mass slit position S2 is the average
over relative configurations of the product of the three atom
transmissions at the projected atom positions S2 + o_i. The average is a
Monte Carlo sum over configurations drawn once per seed; every S2 node,
diffraction order and velocity reuses the same configurations, so
differences such as S0 - S_eff carry little sampling noise.

Configurations are split into batches with independent substreams of the
seed. Standard errors come from the jackknife over batches.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from ._kernels import product_transmission_sum
from .atom import CumulantSet, DiffractionPattern, _meta
from .errors import ShadowingError, ValidityError
from .geometry import diffraction_angles, slit_frame
from .quadrature import composite_rule
from .surface import PhaseKernel
from .trimer_model import sample_relative

DEFAULT_MC_COUNT = 100_000
DEFAULT_VDW_COUNT = 20_000
DEFAULT_BATCHES = 16
EDGE_TOL = 1e-5  # neglected edge contribution, relative to S0
MAX_PANEL = 10.0  # nm


def perpendicular_offsets(masses, rho, r, frame):
    """Slit-line offsets of the three atoms from the centre of mass, shape (n, 3).

    Components are taken along the beam normal and divided by
    cos(alpha + th') to project them onto the slit line.
    """
    n3 = np.array([frame.beam_normal[0], frame.beam_normal[1], 0.0])
    rho_p = rho @ n3
    r_p = r @ n3
    m1, m2, m3 = masses
    M, m23 = m1 + m2 + m3, m2 + m3
    out = np.empty((rho_p.size, 3))
    out[:, 0] = m23 / M * rho_p
    out[:, 1] = -m1 / M * rho_p + m3 / m23 * r_p
    out[:, 2] = -m1 / M * rho_p - m2 / m23 * r_p
    return out / frame.cos_proj


def _batch_seeds(seed, batches):
    return np.random.SeedSequence(seed).spawn(batches)


def draw_offsets(model, frame, count, seed, batches=DEFAULT_BATCHES):
    """List of per-batch offset arrays; batch b uses substream b of ``seed``."""
    per = -(-count // batches)
    out = []
    for ss in _batch_seeds(seed, batches):
        rho, r = sample_relative(model, ss, per)
        out.append(np.ascontiguousarray(perpendicular_offsets(model.masses, rho, r, frame)))
    return out


def _active_kernel(kernel):
    keep = kernel.weights != 0.0
    return (
        np.ascontiguousarray(kernel.eta[keep]),
        np.ascontiguousarray(kernel.weights[keep]),
    )


def _edge_phase_coefficient(kernel, side, n_atoms):
    """a in n_atoms*phi ~ a/xi^2 near one wall, measured at xi = 1 nm."""
    if kernel.prefactor == 0.0:
        return 0.0
    h = kernel.S0 / 2
    xi = min(1.0, h / 4)
    return n_atoms * abs(float(kernel(np.array([side * (h - xi)]))[0])) * xi * xi


def _phase_slope(kernel, s, n_atoms):
    step = 1e-6 * max(1.0, abs(s))
    return n_atoms * abs(float((kernel(np.array([s + step])) - kernel(np.array([s - step])))[0]) / (2 * step))


def _march_to_wall(kernel, side, xi_start, xi_stop, smear, n_atoms):
    """Breaks from distance ``xi_start`` down to ``xi_stop`` from one wall.

    Panels hold about two phase oscillations, never more than half the
    distance to the wall, never less than half the configuration smearing.
    """
    h = kernel.S0 / 2
    pts = []
    xi = xi_start
    while xi > xi_stop:
        pts.append(xi)
        w = xi / 2
        if kernel.prefactor != 0.0:
            slope = _phase_slope(kernel, side * (h - xi), n_atoms)
            if slope > 0:
                w = min(w, 4 * math.pi / slope)
        w = min(max(w, smear / 2), MAX_PANEL)
        xi -= w
    pts.append(xi_stop)
    return np.array(pts)


def slit_line_rule(kernel, lo, hi, smear=0.0, n_atoms=3, walls=(True, True)):
    """Fixed K15 rule on [lo, hi] within the slit, refined toward the walls.

    ``walls`` says whether lo and hi are the slit walls. With an
    interaction and a compact configuration spread the last sliver next
    to a wall is left out; its oscillating contribution is below
    EDGE_TOL * S0. Returns (nodes, weights).
    """
    h = kernel.S0 / 2
    breaks = {lo, hi}
    mid = (lo + hi) / 2
    for is_wall, end, side in ((walls[0], lo, -1.0), (walls[1], hi, 1.0)):
        if not is_wall:
            continue
        a = _edge_phase_coefficient(kernel, side, n_atoms)
        # a compact spread cannot smooth the wall oscillations: cut the sliver
        cut = (2 * a * EDGE_TOL * kernel.S0) ** (1 / 3) if a > 0 else 0.0
        if smear >= cut:
            cut = 0.0
        stop = max(cut, 1e-9 * kernel.S0)
        for xi in _march_to_wall(kernel, side, abs(end - mid), stop, smear, n_atoms):
            breaks.add(side * (h - xi))
        if cut > 0:
            breaks.discard(end)
    pts = np.array(sorted(breaks))
    # interior spacing cap away from the walls
    fine = [pts[0]]
    for b in pts[1:]:
        gap = b - fine[-1]
        if gap > MAX_PANEL:
            k = int(math.ceil(gap / MAX_PANEL))
            fine.extend(fine[-1] + gap * np.arange(1, k) / k)
        fine.append(b)
    return composite_rule(np.array(fine))


def _smearing(offsets):
    allo = np.concatenate(offsets)
    return float(min(allo.max(axis=1).std(), allo.min(axis=1).std()))


@dataclass
class TrimerTransmissionProfile:
    """Monte Carlo trimer transmission over the slit line.

    ``offsets`` holds the per-batch configuration offsets along the slit
    line; ``kernel`` is the single-atom phase at the trimer speed.
    """

    kernel: PhaseKernel
    S0: float
    frame: object
    model: object
    offsets: list
    seed: int
    count: int
    beam: object = None
    geom: object = None
    atom_params: object = None
    workers: int = 1
    nodes: np.ndarray = field(default=None, repr=False)
    weights: np.ndarray = field(default=None, repr=False)
    _node_values: np.ndarray = field(default=None, repr=False)

    @property
    def n_batches(self):
        return len(self.offsets)

    @property
    def smear(self):
        return _smearing(self.offsets)

    def batch_values(self, s2):
        """(n_batches, len(s2)) batch means of the product transmission.

        Batches may run on several threads; each batch is summed on its own
        and stored in its slot, so the result does not depend on ``workers``.
        """
        s2 = np.ascontiguousarray(np.atleast_1d(np.asarray(s2, dtype=float)))
        eta, w = _active_kernel(self.kernel)
        k = self.kernel

        def one(off):
            re, im = product_transmission_sum(s2, off, eta, w, k.eta_origin, k.cos_proj, self.S0, k.prefactor)
            return (re + 1j * im) / off.shape[0]

        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                rows = list(pool.map(one, self.offsets))
        else:
            rows = [one(off) for off in self.offsets]
        return np.array(rows).reshape(self.n_batches, s2.size)

    def __call__(self, s2):
        return self.batch_values(s2).mean(axis=0)

    def stderr(self, s2):
        return _batch_stderr(self.batch_values(s2))

    def ensure_rule(self):
        if self.nodes is None:
            h = self.S0 / 2
            self.nodes, self.weights = slit_line_rule(self.kernel, -h, h, self.smear, n_atoms=3)
            self._node_values = self.batch_values(self.nodes)
        return self.nodes, self.weights, self._node_values


def _batch_stderr(vals):
    n = vals.shape[0]
    return np.abs(vals.std(axis=0, ddof=1)) / math.sqrt(n) if n > 1 else np.zeros(vals.shape[1:])


def _jackknife(fn, batch_data):
    """Jackknife standard error of fn(mean over batches) along axis 0."""
    B = batch_data.shape[0]
    full = fn(batch_data.mean(axis=0))
    if B < 2:
        return full, np.zeros_like(full)
    total = batch_data.sum(axis=0)
    loo = np.array([fn((total - batch_data[b]) / (B - 1)) for b in range(B)])
    err = np.sqrt((B - 1) / B * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return full, err


def trimer_beam_check(beam, model):
    expected = model.total_mass
    if abs(beam.mass_u - expected) > 1e-9 * expected:
        raise ValidityError(f"beam mass {beam.mass_u} u is not the trimer mass {expected} u")


def transmission_trimer_profile(geom, beam, atom_params, model, count=DEFAULT_MC_COUNT, seed=0, batches=DEFAULT_BATCHES, workers=1):
    """Build the Monte Carlo trimer transmission for a beam of trimers.

    ``beam`` describes the centre of mass with the total trimer mass; every
    atom moves at the same speed, so one atom phase kernel serves all three.
    """
    trimer_beam_check(beam, model)
    fr = slit_frame(geom, beam.theta)
    kernel = PhaseKernel.build(geom, beam.theta, beam.speed, atom_params.C3)
    offsets = draw_offsets(model, fr, count, seed, batches)
    return TrimerTransmissionProfile(kernel, fr.S0, fr, model, offsets, seed, count, beam, geom, atom_params, workers)


def transmission_trimer(geom, beam, atom_params, model, s2, count=DEFAULT_MC_COUNT, seed=0):
    """tau_tri(s2) and its Monte Carlo standard error."""
    prof = transmission_trimer_profile(geom, beam, atom_params, model, count, seed)
    vals = prof.batch_values(s2)
    mean = vals.mean(axis=0)
    err = _batch_stderr(vals)
    if np.ndim(s2) == 0:
        return complex(mean[0]), float(err[0])
    return mean, err


def _slit_amplitudes(prof, ks):
    """Per-batch slit function a(k) for each k, shape (B, len(ks))."""
    nodes, weights, vals = prof.ensure_rule()
    phase = np.exp(-1j * np.outer(ks, nodes)) * weights
    return vals @ phase.T


def pattern_trimer_exact(geom, beam, atom_params, model, orders, count=DEFAULT_MC_COUNT, seed=0, profile=None, workers=1):
    """Elastic trimer pattern I_n/I_0 with jackknife Monte Carlo errors."""
    trimer_beam_check(beam, model)
    kin = diffraction_angles(geom, beam, orders)
    prof = profile or transmission_trimer_profile(geom, beam, atom_params, model, count, seed, workers=workers)
    ks = np.append(kin.dk_s2, 0.0)
    amps = _slit_amplitudes(prof, ks)
    obl = kin.obliquity()

    def inten(a):
        return obl * np.abs(a[:-1]) ** 2 / abs(a[-1]) ** 2

    # jackknife acts on the complex batch means
    I, err = _jackknife(lambda a: inten(a), amps)
    I = np.where(kin.orders == 0, 1.0, I)
    err = np.where(kin.orders == 0, 0.0, err)
    a_mean = amps.mean(axis=0)
    meta = _meta(
        geom,
        beam,
        atom_params,
        kin,
        {
            "model": model,
            "mc_count": prof.count,
            "seed": seed,
            "batches": prof.n_batches,
            "s2_nodes": prof.nodes.size,
            "absolute_intensity": obl * np.abs(a_mean[:-1]) ** 2,
        },
    )
    return DiffractionPattern(kin.orders, kin.theta_n, kin.dk_s2, I, "exact", "trimer", err, meta)


def _trimer_moments(prof):
    nodes, weights, vals = prof.ensure_rule()
    h = prof.S0 / 2
    pos = nodes > 0
    xi = h - np.abs(nodes)
    comps = np.vstack([np.where(pos, weights, 0), np.where(pos, 0, weights), np.where(pos, xi * weights, 0), np.where(pos, 0, xi * weights)])
    return vals @ comps.T


def cumulants_trimer(profile, normalize=True):
    """Cumulants of the trimer transmission, including Omega."""
    mom = _trimer_moments(profile).mean(axis=0)
    tau0 = complex(profile(np.array([0.0]))[0]) if normalize else 1.0
    return CumulantSet.from_moments(profile.S0, *mom, tau0=tau0)


def pattern_cumulant_trimer(geom, beam, cums, orders, kin=None, meta=None):
    """Closed-form trimer cumulant intensities, Omega included."""
    from .atom import pattern_cumulant

    return pattern_cumulant(geom, beam, cums, orders, kind="trimer", kin=kin, meta=meta)


def effective_width_geometric_closed(geom, beam, model):
    """S0 minus the projected trimer width from analytic pair expectations.

    For every model here each pair distance has the same isotropic
    distribution, so <|r_perp|> = <r>/2 for every pair.
    """
    fr = slit_frame(geom, beam.theta)
    pair_perp = model.mean_r / 2
    return fr.S0 - 3 * pair_perp / (2 * fr.cos_proj)


def projected_widths(offsets):
    allo = np.concatenate(offsets) if isinstance(offsets, list) else offsets
    return allo.max(axis=1) - allo.min(axis=1)


def effective_width_geometric(geom, beam, model, count=DEFAULT_MC_COUNT, seed=0, offsets=None):
    """Monte Carlo geometric width S0 - <max_i o_i - min_i o_i> and its error.

    For three points on a line max - min is half the sum of the pair
    separations, so this is the sum-over-pairs form; masses may differ.
    Raises :class:`ShadowingError` if the mean projected width exceeds S0.
    """
    fr = slit_frame(geom, beam.theta)
    if offsets is None:
        offsets = draw_offsets(model, fr, count, seed)
    wid = projected_widths(offsets)
    val = fr.S0 - float(wid.mean())
    err = float(wid.std(ddof=1) / math.sqrt(wid.size)) if wid.size > 1 else 0.0
    if val <= 0:
        raise ShadowingError(f"trimer wider than the slit: S_eff_geom = {val:.4g} nm")
    return val, err


def _vdw_shifts(offsets_or_perp):
    """Per-configuration shifts (a+, b+, a-, b-) of the full vdW form, slit-line units."""
    o = offsets_or_perp
    # recover rho_perp and |r_perp| in slit-line units from identical-mass offsets
    rho = o[:, 0] * 1.5
    rabs = np.abs(o[:, 1] - o[:, 2])
    u = rho - rabs / 2
    a_p = np.abs(u)
    b_p = rabs + np.where(u > 0, u, 0.0)
    v = rho + rabs / 2
    a_m = np.abs(v)
    b_m = rabs - np.where(v < 0, v, 0.0)
    return a_p, b_p, a_m, b_m


def _half_rules(kernel):
    h = kernel.S0 / 2
    up = slit_line_rule(kernel, 0.0, h, 0.0, n_atoms=3, walls=(False, True))
    lo = slit_line_rule(kernel, -h, 0.0, 0.0, n_atoms=3, walls=(True, False))
    return up, lo


def _shifted_sum(kernel, rule, shifts):
    nodes, weights = rule
    eta, w = _active_kernel(kernel)
    re, im = product_transmission_sum(
        np.ascontiguousarray(nodes), np.ascontiguousarray(shifts), eta, w, kernel.eta_origin, kernel.cos_proj, kernel.S0, kernel.prefactor
    )
    return ((re + 1j * im) * weights).sum()


def _inside_sum(kernel, rule, shifts):
    """Rule integral of the all-atoms-inside indicator, summed over configurations."""
    nodes, weights = rule
    eta, w = _active_kernel(kernel)
    re, _ = product_transmission_sum(
        np.ascontiguousarray(nodes), np.ascontiguousarray(shifts), eta, w, kernel.eta_origin, kernel.cos_proj, kernel.S0, 0.0
    )
    return (re * weights).sum()


def _vdw_half_integral(kernel, rules, shifts_up, shifts_lo):
    """Sum over configurations of the two half-slit integrals of 1 - tau tau tau.

    The 1 only counts where all three atoms are inside the slit; a
    configuration whose inner atoms reach past the far wall has lost that
    stretch to the geometric width already. The wall slivers the rules
    leave out are counted in full.
    """
    (up, lo) = rules
    n = shifts_up.shape[0]
    h = kernel.S0 / 2
    sliver = 2 * h - up[1].sum() - lo[1].sum()
    const = n * sliver + _inside_sum(kernel, up, shifts_up) + _inside_sum(kernel, lo, shifts_lo)
    s_up = _shifted_sum(kernel, up, shifts_up)
    s_lo = _shifted_sum(kernel, lo, shifts_lo)
    return const - s_up - s_lo


def effective_width_vdw_reduced(geom, beam, atom_params, mean_r, kernel=None, rules=None):
    """vdW part from the form that uses only <|r_perp|> = <r>/2."""
    fr = slit_frame(geom, beam.theta)
    kernel = kernel or PhaseKernel.build(geom, beam.theta, beam.speed, atom_params.C3)
    rules = rules or _half_rules(kernel)
    u = mean_r / 2 / fr.cos_proj
    up = np.array([[0.0, -u, -1.25 * u]])
    lo = np.array([[0.0, u, 1.25 * u]])
    return -float(_vdw_half_integral(kernel, rules, up, lo).real)


def effective_width_vdw_full(geom, beam, atom_params, model, count=DEFAULT_VDW_COUNT, seed=0, batches=DEFAULT_BATCHES, kernel=None, rules=None):
    """vdW part averaged over configurations; returns (value, stderr).

    Uses the identical-boson form with the outermost atom at S' and the
    other two shifted inward by per-configuration distances.
    """
    fr = slit_frame(geom, beam.theta)
    kernel = kernel or PhaseKernel.build(geom, beam.theta, beam.speed, atom_params.C3)
    rules = rules or _half_rules(kernel)
    vals = []
    for off in draw_offsets(model, fr, count, seed, batches):
        a_p, b_p, a_m, b_m = _vdw_shifts(off)
        z = np.zeros_like(a_p)
        up = np.ascontiguousarray(np.column_stack([z, -a_p, -b_p]))
        lo = np.ascontiguousarray(np.column_stack([z, a_m, b_m]))
        vals.append(-float(_vdw_half_integral(kernel, rules, up, lo).real) / off.shape[0])
    vals = np.array(vals)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


@dataclass(frozen=True)
class EffectiveSlitWidth:
    """Effective slit width of a trimer and its split into parts.

    ``S_eff_vdw`` is S_eff_total - S_eff_geom with both parts evaluated on
    the same configurations. The full and reduced vdW forms are kept for
    comparison; ``S_eff_geom_closed`` uses analytic pair expectations.
    """

    S_eff_total: float
    S_eff_geom: float
    S_eff_vdw: float
    total_err: float
    geom_err: float
    vdw_err: float
    S_eff_geom_closed: float
    vdw_full: float
    vdw_full_err: float
    vdw_reduced: float

    @property
    def total_full(self):
        return self.S_eff_geom_closed + self.vdw_full

    @property
    def total_reduced(self):
        return self.S_eff_geom_closed + self.vdw_reduced

    def as_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["total_full"] = self.total_full
        d["total_reduced"] = self.total_reduced
        return d


def effective_slit_width(geom, beam, atom_params, model, count=DEFAULT_MC_COUNT, seed=0, vdw_count=DEFAULT_VDW_COUNT, profile=None, workers=1):
    """Total, geometric and vdW effective widths on one set of configurations."""
    prof = profile or transmission_trimer_profile(geom, beam, atom_params, model, count, seed, workers=workers)
    _, weights, vals = prof.ensure_rule()
    wid_b = np.array([off.max(axis=1).mean() - off.min(axis=1).mean() for off in prof.offsets])
    tot_b = (vals @ weights).real
    geom_b = prof.S0 - wid_b
    total, total_err = _jackknife(lambda x: x, tot_b)
    g, g_err = _jackknife(lambda x: x, geom_b)
    vdw, vdw_err = _jackknife(lambda x: x, tot_b - geom_b)
    kernel = prof.kernel
    rules = _half_rules(kernel)
    geom_closed = effective_width_geometric_closed(geom, beam, model)
    if atom_params.C3 == 0.0:
        full, full_err, red = 0.0, 0.0, 0.0
    else:
        full, full_err = effective_width_vdw_full(geom, beam, atom_params, model, vdw_count, seed, kernel=kernel, rules=rules)
        red = effective_width_vdw_reduced(geom, beam, atom_params, model.mean_r, kernel=kernel, rules=rules)
    return EffectiveSlitWidth(
        float(total), float(g), float(vdw), float(total_err), float(g_err), float(vdw_err), geom_closed, full, full_err, red
    )


def effective_width_vdw(geom, beam, atom_params, model=None, mean_r=None, count=DEFAULT_VDW_COUNT, seed=0):
    """Both vdW forms: {"full": (value, stderr) or None, "reduced": value}."""
    if model is None and mean_r is None:
        raise ValueError("need a model or a mean pair distance")
    kernel = PhaseKernel.build(geom, beam.theta, beam.speed, atom_params.C3)
    rules = _half_rules(kernel)
    mr = model.mean_r if mean_r is None else mean_r
    if atom_params.C3 == 0.0:
        return {"full": (0.0, 0.0) if model is not None else None, "reduced": 0.0}
    full = effective_width_vdw_full(geom, beam, atom_params, model, count, seed, kernel=kernel, rules=rules) if model is not None else None
    return {"full": full, "reduced": effective_width_vdw_reduced(geom, beam, atom_params, mr, kernel=kernel, rules=rules)}


def off_diagonal_bound(geom, beam, model):
    """Upper bound on the probability that a trimer spans a whole bar.

    A configuration can straddle a bar only if its projected extent
    exceeds the bar's extent along the slit line, d~ - S0, which needs a
    pair distance above (d~ - S0) cos(alpha + th'). Gaussian models: union
    bound over pairs with each perpendicular pair component normal.
    Exponential models: the sum of pair distances is Gamma(6, sigma)
    distributed and exceeds twice the largest pair distance.
    """
    fr = slit_frame(geom, beam.theta)
    d_t = geom.period_d * math.cos(beam.theta) / fr.cos_proj
    L = (d_t - fr.S0) * fr.cos_proj
    if model.sigma == 0:
        return 0.0
    if model.family == "gaussian":
        C = model.covariance
        # perpendicular pair components: linear maps of (rho_perp, r_perp)
        a = model.masses[2] / (model.masses[1] + model.masses[2])
        b = model.masses[1] / (model.masses[1] + model.masses[2])
        rows = np.array([[0.0, 1.0], [-1.0, -b], [1.0, -a]])
        var = np.einsum("ij,jk,ik->i", rows, C, rows)
        return float(min(1.0, sum(special.erfc(L / math.sqrt(2 * v)) for v in var)))
    return float(stats.gamma.sf(2 * L, 6, scale=model.sigma))
