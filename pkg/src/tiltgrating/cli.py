"""Command-line entry point: pattern, fit, extract-size and scan subcommands.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import math
import os
import sys
from pathlib import Path

import numpy as np

from .atom import DiffractionPattern, cumulants, pattern_cumulant, pattern_exact
from .config import canonical_json, load_config
from .errors import NumericalFailure, TiltGratingError
from .geometry import Beam, projected_ratios, slit_frame
from .io import PatternFile, read_json, read_pattern, timestamp, write_json, write_table

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def geometry_hash(cfg):
    """Hash of what must agree between reports combined in one size fit."""
    phys = cfg.physical()
    key = {"geometry": phys["geometry"], "theta_deg": phys["beam"]["theta_deg"], "surface": phys["surface"], "mass": cfg.beam.mass_u}
    return hashlib.sha256(canonical_json(key).encode()).hexdigest()[:16]


def _result_config(raw):
    """Config echoed into outputs, minus settings that cannot change results."""
    out = copy.deepcopy(raw)
    out.pop("output", None)
    mc = out.get("mc")
    if mc is not None:
        mc.pop("workers", None)
        if not mc:
            out.pop("mc")
    return out


def _header(cfg, method, beam, extra=None):
    h = {
        "kind": cfg.kind,
        "method": method,
        "config_hash": cfg.config_hash(),
        "geometry_hash": geometry_hash(cfg),
        "seed": cfg.seed,
        "speed_m_s": repr(float(beam.speed)),
        "config": _result_config(cfg.raw),
    }
    if cfg.kind == "trimer":
        h["mc_count"] = cfg.mc_count
    if cfg.stamp:
        h["created"] = timestamp()
    if extra:
        h.update(extra)
    return h


def _speed_tag(v):
    return f"{v:g}".replace(".", "p")


def forward_patterns(cfg, beam):
    """{method: DiffractionPattern} for one beam, methods per cfg.method."""
    from .trimer import cumulants_trimer, pattern_cumulant_trimer, pattern_trimer_exact, transmission_trimer_profile

    want = ("exact", "cumulant") if cfg.method == "both" else (cfg.method,)
    out = {}
    if cfg.kind == "atom":
        ex, cums = pattern_exact(cfg.geometry, beam, cfg.surface, cfg.orders, return_cumulants=True)
        if "exact" in want:
            out["exact"] = ex
        if "cumulant" in want:
            out["cumulant"] = pattern_cumulant(cfg.geometry, beam, cums, cfg.orders)
        return out, cums
    prof = transmission_trimer_profile(cfg.geometry, beam, cfg.surface, cfg.trimer, cfg.mc_count, cfg.seed, workers=cfg.workers)
    if "exact" in want:
        out["exact"] = pattern_trimer_exact(cfg.geometry, beam, cfg.surface, cfg.trimer, cfg.orders, seed=cfg.seed, profile=prof)
    cums = cumulants_trimer(prof)
    if "cumulant" in want:
        out["cumulant"] = pattern_cumulant_trimer(cfg.geometry, beam, cums, cfg.orders)
    return out, cums


def cmd_pattern(cfg, out_dir):
    written = []
    for beam in cfg.beams:
        pats, cums = forward_patterns(cfg, beam)
        for method, pat in pats.items():
            extra = {"cumulants": {k: float(v) for k, v in cums.summary().items()}}
            pf = PatternFile.from_pattern(pat, _header(cfg, method, beam, extra))
            path = out_dir / f"pattern_{cfg.kind}_{method}_v{_speed_tag(beam.speed)}.csv"
            pf.write(path)
            written.append(path)
    return written


def pattern_from_file(pf):
    """Rebuild (DiffractionPattern, RunConfig, Beam) from a pattern file."""
    cfg = load_config(pf.header["config"])
    speed = float(pf.header["speed_m_s"])
    beam = Beam(cfg.beam.mass_u, speed, cfg.beam.theta)
    c = pf.columns()
    err = c["mc_stderr"] if not np.all(np.isnan(c["mc_stderr"])) else None
    pat = DiffractionPattern(
        c["n"].astype(int),
        np.radians(c["theta_n_deg"]),
        c["delta_p_s2_per_hbar_nm_inv"],
        c["intensity_rel"],
        pf.header.get("method", "exact"),
        pf.header.get("kind", cfg.kind),
        err,
        {"geometry": cfg.geometry, "beam": beam},
    )
    return pat, cfg, beam


def cmd_fit(paths, kind, out_dir, pin=None):
    from .extraction import fit_pattern

    written = []
    for p in paths:
        pf = read_pattern(p)
        pat, cfg, beam = pattern_from_file(pf)
        fit = fit_pattern(pat, kind or pat.kind, cfg.geometry, beam, pin=pin)
        report = {
            "source": os.path.basename(str(p)),
            "config_hash": pf.header.get("config_hash"),
            "geometry_hash": geometry_hash(cfg),
            "speed_m_s": beam.speed,
            "config": cfg.raw,
            "fit": fit.as_dict(),
        }
        path = out_dir / f"fit_{Path(p).stem}.json"
        write_json(path, report)
        written.append(path)
    return written


def cmd_extract_size(paths, out_dir, method=None):
    from .extraction import extract_size

    reports = [read_json(p) for p in paths]
    if not reports:
        raise TiltGratingError("no fit reports given")
    hashes = {r.get("geometry_hash") for r in reports}
    if len(hashes) != 1:
        raise TiltGratingError(f"fit reports disagree on geometry: {sorted(map(str, hashes))}")
    cfg = load_config(reports[0]["config"])
    beams = [Beam(cfg.beam.mass_u, float(r["speed_m_s"]), cfg.beam.theta) for r in reports]
    S = [r["fit"]["params"]["S_eff"] for r in reports]
    errs = [r["fit"]["stderr"]["S_eff"] for r in reports]
    if method is None:
        method = "geom-only" if len(reports) == 1 or cfg.surface.C3 == 0 else "geom+vdw-reduced"
    est = extract_size(S, cfg.geometry, beams, cfg.surface, errors=errs if all(e > 0 for e in errs) else None, method=method)
    path = out_dir / "size.json"
    write_json(path, {"geometry_hash": hashes.pop(), "sources": [os.path.basename(str(p)) for p in paths], "size": est.as_dict()})
    return [path]


def _scan_theta(cfg, values):
    from .trimer import effective_width_geometric_closed

    cols = ["theta_deg", "alpha_deg", "S0_nm", "cos_alpha_theta", "d_perp_nm", "s_perp_nm", "d_perp_over_s_perp"]
    if cfg.kind == "trimer":
        cols.append("S_eff_geom_nm")
    rows = []
    for th in values:
        beam = cfg.beam.with_theta(math.radians(th))
        fr = slit_frame(cfg.geometry, beam.theta)
        pr = projected_ratios(cfg.geometry, beam)
        row = [th, math.degrees(fr.alpha), fr.S0, fr.cos_proj, pr.d_perp, pr.s_perp, pr.ratio]
        if cfg.kind == "trimer":
            row.append(effective_width_geometric_closed(cfg.geometry, beam, cfg.trimer))
        rows.append(row)
    return cols, rows


def _scan_v(cfg, values):
    from .trimer import effective_slit_width

    beams = [cfg.beam.with_speed(float(v)) for v in values]
    if cfg.kind == "atom":
        from .surface import transmission_atom

        rows = []
        for b in beams:
            c = cumulants(transmission_atom(cfg.geometry, b, cfg.surface))
            rows.append([b.speed, c.S_eff, c.Delta, c.Gamma, c.sigma_sq])
        return ["v_m_s", "S_eff_nm", "Delta_nm", "Gamma_nm", "Sigma_sq_nm2"], rows
    keys = None
    rows = []
    for b in beams:
        e = effective_slit_width(cfg.geometry, b, cfg.surface, cfg.trimer, cfg.mc_count, cfg.seed, cfg.vdw_count, workers=cfg.workers).as_dict()
        keys = keys or list(e)
        rows.append([b.speed] + [e[k] for k in keys])
    return ["v_m_s"] + keys, rows


def _scan_w(cfg, values):
    from .extraction import mixed_beam_analysis
    from .trimer_model import HE3_EXCITED_MEAN_R, HE3_GROUND_MEAN_R, make_model

    if cfg.kind != "trimer":
        raise TiltGratingError("a w scan needs a trimer block")
    if len(cfg.beams) < 2:
        raise TiltGratingError("a w scan needs at least two velocities")
    fam = cfg.trimer.family
    ground = make_model(fam, None, HE3_GROUND_MEAN_R)
    excited = make_model(fam, None, HE3_EXCITED_MEAN_R)
    res = mixed_beam_analysis(values, cfg.geometry, list(cfg.beams), cfg.surface, ground, excited, cfg.orders, cfg.mc_count, cfg.seed)
    cols = ["w_ground", "apparent_mean_r_nm", "uncertainty_nm"] + [f"S_eff_v{_speed_tag(b.speed)}_nm" for b in cfg.beams]
    return cols, [[r.w_ground, r.apparent_mean_r, r.uncertainty, *r.S_eff] for r in res]


def cmd_scan(cfg, out_dir):
    if not cfg.scan:
        raise TiltGratingError("config has no scan block")
    values = cfg.scan["values"]
    if not values:
        raise TiltGratingError("empty sweep")
    var = cfg.scan["variable"]
    cols, rows = {"theta": _scan_theta, "v": _scan_v, "w": _scan_w}[var](cfg, values)
    header = {"config_hash": cfg.config_hash(), "seed": cfg.seed, "variable": var, "config": _result_config(cfg.raw)}
    if var == "w":
        header["apparent_mean_r"] = "the <r> a pure-beam analysis of the mixed pattern reports"
    if cfg.stamp:
        header["created"] = timestamp()
    path = out_dir / f"scan_{var}.csv"
    write_table(path, cols, rows, header)
    return [path]


def _orders(text):
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"orders must look like min:max, got {text!r}") from None


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="tiltgrating", description="Atom and trimer diffraction from a tilted transmission grating")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, with_config=True):
        if with_config:
            p.add_argument("--config", required=True, help="JSON run configuration")
            p.add_argument("--seed", type=_seed)
            p.add_argument("--orders", type=_orders, help="min:max")
            p.add_argument("--method", choices=["exact", "cumulant", "both"])
            p.add_argument("--workers", type=int, help="threads for the Monte Carlo batches")
            p.add_argument("--stamp", action="store_true", help="write a creation time into headers")
        p.add_argument("--out", default=None, help="output directory")

    common(sub.add_parser("pattern", help="forward diffraction patterns"))
    p = sub.add_parser("fit", help="fit the cumulant formula to pattern files")
    p.add_argument("patterns", nargs="+")
    p.add_argument("--kind", choices=["atom", "trimer"])
    p.add_argument("--pin-gamma", type=float)
    p.add_argument("--pin-omega", type=float)
    common(p, with_config=False)
    p = sub.add_parser("extract-size", help="trimer size from fit reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--method", choices=["geom-only", "geom+vdw-reduced"])
    common(p, with_config=False)
    common(sub.add_parser("scan", help="sweep theta, v or w"))
    return ap


def run(argv=None):
    args = build_parser().parse_args(argv)
    if args.command in ("pattern", "scan"):
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, orders=args.orders, method=args.method, out_dir=args.out, workers=args.workers, stamp=args.stamp or None
        )
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = cmd_pattern(cfg, out) if args.command == "pattern" else cmd_scan(cfg, out)
    else:
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "fit":
            pin = {k: v for k, v in (("Gamma", args.pin_gamma), ("Omega", args.pin_omega)) if v is not None}
            written = cmd_fit(args.patterns, args.kind, out, pin)
        else:
            written = cmd_extract_size(args.reports, out, args.method)
    for path in written:
        print(path)
    return EXIT_OK


def main(argv=None):
    try:
        return run(argv)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TiltGratingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
