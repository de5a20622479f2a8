"""Command-line batch runner: ``drk <command> --config <path> [--out <dir>] [--workers N]``.

Every command writes ``manifest_<command>.json`` (versions, config hash,
tolerances, file schemas, results) plus CSV data files into the output
directory.  Exit codes: 0 success, 2 configuration errors, 3 numerical
failures.
"""
from __future__ import annotations

import argparse
import csv
import json
from importlib import metadata
import math
import platform
import sys
import warnings
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy
from scipy import stats

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .parallel import ordered_map, resolve_workers
from .parametrix import ReducedModel, fio_apply, identity_suite, propagator_error, _grid, _probes, reference_propagator
from .radial import assemble_channel_operator, channel_list, interaction_radius, validate_radial_fields, ComplexScaling
from .resonances import (
    DEFAULT_CAP,
    RegionQuery,
    channel_resonances,
    count_in_disk,
    count_in_region,
    merge_resonances,
    write_csv,
)
from .ssf import lorentzian_fit, representation_residual, ssf_curve, weyl_term
from .trace import bump_function, gamma0, gamma0_from_weyl, numerical_trace_difference, smooth_plateau

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("validate", "resonances", "ssf", "weyl", "breit-wigner", "count", "trace", "parametrix")
SCATTER_COLUMNS = ("h", "re_z", "im_z", "kappa", "degeneracy")


class Run:
    """Output bookkeeping shared by the commands."""

    def __init__(self, command: str, cfg: RunConfig, out: Path, workers: int):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.workers = workers
        self.files: dict = {}
        self.notes: list[str] = []
        self.tolerances: dict = {}

    def csv(self, name: str, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
        with open(self.out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.files[name] = {"columns": list(columns), "rows": len(rows)}

    def register(self, name: str, columns: Sequence[str], rows: int) -> None:
        self.files[name] = {"columns": list(columns), "rows": rows}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _clean(obj):
    """JSON-safe copy: complex -> [re, im], non-finite floats -> None, numpy scalars -> Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [_clean(float(obj.real)), _clean(float(obj.imag))]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def versions() -> dict:
    return {
        "diracres": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "jsonschema": metadata.version("jsonschema"),
        "python": platform.python_version(),
    }


def _slope(h: Sequence[float], y: Sequence[float]) -> tuple[Optional[float], Optional[float]]:
    """Least-squares slope of log|y| against log(1/h) and its standard error."""
    h = np.asarray(h, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    ok = y > 0
    if ok.sum() < 2:
        return None, None
    x = np.log(1.0 / h[ok])
    ly = np.log(y[ok])
    if ok.sum() == 2:
        return float((ly[1] - ly[0]) / (x[1] - x[0])), 0.0
    fit = stats.linregress(x, ly)
    return float(fit.slope), float(fit.stderr)


def _require(cfg: RunConfig, *keys: str) -> None:
    missing = []
    if "distortion" in keys and cfg.scaling is None:
        missing.append("field distortion: required by this command")
    if "grid" in keys and cfg.grid is None:
        missing.append("field grid: required by this command")
    for k in keys:
        if k not in ("distortion", "grid") and k not in cfg.sections:
            missing.append(f"field {k}: section required by this command")
    if missing:
        raise ConfigError(missing)


def _search(run: Run, h: float, q: RegionQuery, tol: float, cap: int, refine: bool = False) -> list:
    cfg = run.cfg
    phys = cfg.physics(h)
    grid = cfg.grid_for(h)
    chans = channel_list(h, (q.re_min, q.re_max), cfg.fields, phys)
    results = ordered_map(
        lambda ch: channel_resonances(ch, cfg.thetas, cfg.scaling, grid, cfg.fields, phys, tol, region=q, refine_grid=refine, cap=cap),
        chans,
        run.workers,
    )
    dropped = sum(len(cr.unresolved) for cr in results)
    if dropped:
        run.notes.append(f"h={h!r}: {dropped} theta-stable points beyond the resolved energy range discarded as mesh artifacts")
    return merge_resonances(results)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_validate(run: Run) -> dict:
    cfg = run.cfg
    report = validate_radial_fields(cfg.fields, cfg.physical)
    if cfg.fields.is_free:
        run.notes.append("free operator; no resonances expected")
    run.notes.extend(report.pop("warnings"))
    report["interaction_radius"] = interaction_radius(cfg.fields, cfg.physical)
    if "resonances" in cfg.sections:
        q = cfg.region("resonances")
        report["channels_per_h"] = {
            repr(h): len(channel_list(h, (q.re_min, q.re_max), cfg.fields, cfg.physics(h))) for h in cfg.h_list
        }
    return report


def cmd_resonances(run: Run) -> dict:
    cfg = run.cfg
    _require(cfg, "distortion", "grid", "resonances")
    sec = cfg.sections["resonances"]
    q = cfg.region("resonances")
    tol = float(sec.get("tol", 1e-6 * q.diameter))
    cap = int(sec.get("cap", DEFAULT_CAP))
    run.tolerances.update({"theta_tol": tol, "third_theta_tol": 3 * tol, "dense_cap": cap})
    if cfg.fields.is_free:
        run.notes.append("free operator; no resonances expected")
    scatter, stability = [], []
    for i, h in enumerate(cfg.h_list):
        res = _search(run, h, q, tol, cap, bool(sec.get("refine_grid", False)))
        name = f"resonances_h{i}.csv"
        write_csv(res, run.out / name)
        run.register(name, ("kappa", "degeneracy", "re_z", "im_z", "theta_residual", "grid_residual"), len(res))
        scatter.extend((h, r.z.real, r.z.imag, r.kappa, r.degeneracy) for r in res)
        stability.append(
            {
                "h": h,
                "count": len(res),
                "weighted_count": sum(r.degeneracy for r in res),
                "max_theta_residual": max((r.theta_residual for r in res), default=0.0),
                "thetas": list(cfg.thetas),
                "stable": all(r.theta_residual <= 3 * tol for r in res),
            }
        )
        if cfg.raw.get("export_operators"):
            opdir = run.out / "operators"
            opdir.mkdir(exist_ok=True)
            for ch in channel_list(h, (q.re_min, q.re_max), cfg.fields, cfg.physics(h)):
                op = assemble_channel_operator(ch, ComplexScaling(cfg.thetas[0], cfg.scaling), cfg.grid_for(h), cfg.fields, cfg.physics(h))
                op.export_matrix_market(opdir / f"h{i}_kappa{ch.kappa}.mtx")
    run.csv("resonance_scatter.csv", SCATTER_COLUMNS, scatter)
    return {"theta_stability": stability}


def _lambdas(spec) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], spec["num"])
    return np.asarray(spec, dtype=float)


def cmd_ssf(run: Run) -> dict:
    cfg = run.cfg
    _require(cfg, "ssf")
    sec = cfg.sections["ssf"]
    lam = _lambdas(sec["lambdas"])
    width = float(sec.get("mollifier_width", 3.0))
    run.tolerances.update({"phase_shift_rtol": 1e-12, "mollifier_width_steps": width})
    out = []
    for i, h in enumerate(cfg.h_list):
        curve = ssf_curve(lam, h, cfg.fields, cfg.physical, kappa_max=sec.get("kappa_max"), mollifier_width=width,
                          radial_grid=cfg.grid_for(h), workers=run.workers)
        run.csv(f"ssf_h{i}.csv", ("lambda", "xi", "xi_prime", "tail_estimate"),
                list(zip(curve.lambdas, curve.xi, curve.xi_prime, curve.tail_estimate)))
        out.append({"h": h, "kappa_max": curve.kappa_max, "gap_eigenvalues": len(curve.gap_eigenvalues),
                    "max_tail_estimate": float(np.max(curve.tail_estimate)) if curve.tail_estimate.size else 0.0})
    return {"curves": out}


def weyl_sweep(cfg: RunConfig, lam: float, lam1: float, workers: int = 1) -> dict:
    """|xi(lam, h) - xi(lam1, h)| over the h list, the Weyl prediction and both fitted slopes."""
    w = weyl_term(lam, lam1, cfg.fields, cfg.physical)
    pts = sorted((lam, lam1))
    rows = []
    for h in cfg.h_list:
        curve = ssf_curve(pts, h, cfg.fields, cfg.physical, radial_grid=cfg.grid_for(h), workers=workers)
        inc = float(curve.xi[1] - curve.xi[0]) if lam > lam1 else float(curve.xi[0] - curve.xi[1])
        pred = w.value * h**-3
        rows.append((h, 1.0 / h, inc, pred, abs(inc - pred)))
    hs = [r[0] for r in rows]
    slope, se = _slope(hs, [r[2] for r in rows])
    rslope, rse = _slope(hs, [r[4] for r in rows])
    return {
        "weyl_term": w.value,
        "weyl_error_estimate": w.error_estimate,
        "rows": rows,
        "fitted_slope": slope,
        "slope_stderr": se,
        "residual_slope": rslope,
        "residual_slope_stderr": rse,
    }


def cmd_weyl(run: Run) -> dict:
    cfg = run.cfg
    _require(cfg, "weyl")
    sec = cfg.sections["weyl"]
    run.tolerances.update({"weyl_quad_epsrel": 1e-12, "slope_band": [2.7, 3.3], "residual_slope_max": 2.4})
    res = weyl_sweep(cfg, float(sec["lam"]), float(sec["lam1"]), run.workers)
    rows = [(*r, res["fitted_slope"], res["slope_stderr"]) for r in res.pop("rows")]
    run.csv("weyl_loglog.csv", ("h", "inv_h", "xi_increment", "weyl_prediction", "residual", "fitted_slope", "slope_stderr"), rows)
    res["sweep"] = [{"h": r[0], "xi_increment": r[2], "weyl_prediction": r[3], "residual": r[4]} for r in rows]
    return res


def breit_wigner_study(cfg: RunConfig, workers: int = 1) -> list[dict]:
    """Lorentzian fits of xi' around isolated narrow resonances found by the solver."""
    sec = cfg.sections["breit-wigner"]
    q = cfg.region("breit-wigner")
    h = cfg.h_list[0]
    tol = float(sec.get("tol", 1e-6 * q.diameter))
    iso = float(sec.get("isolation", 0.01))
    hw = float(sec.get("half_widths", 20.0))
    n = int(sec.get("samples", 401))
    run = Run("breit-wigner", cfg, Path("."), workers)
    res = _search(run, h, q, tol, int(sec.get("cap", DEFAULT_CAP)))
    picked = []
    for r in res:
        others = [abs(r.z - s.z) for s in res if s is not r]
        spacing = min(others) if others else math.inf
        if -r.z.imag <= iso * spacing and r.z.imag < 0:
            picked.append((r, spacing))
    picked.sort(key=lambda t: -t[0].z.imag)
    out = []
    for r, spacing in picked[: int(sec.get("max_resonances", 1))]:
        g = -r.z.imag
        lams = np.linspace(r.z.real - hw * g, r.z.real + hw * g, n)
        curve = ssf_curve(lams, h, cfg.fields, cfg.physical, radial_grid=cfg.grid_for(h), workers=workers)
        fit = lorentzian_fit(lams, curve.xi_prime, degeneracy=r.degeneracy)
        rr = representation_residual(curve, res, (lams[0], lams[-1]))
        peak = r.degeneracy / (math.pi * g)
        out.append(
            {
                "h": h,
                "resonance": r.z,
                "kappa": r.kappa,
                "degeneracy": r.degeneracy,
                "spacing": spacing,
                "fit_re": fit.re_w,
                "fit_im": fit.im_w,
                "im_relative_error": abs(fit.im_w - r.z.imag) / g,
                "re_error_over_width": abs(fit.re_w - r.z.real) / g,
                "remainder_peak_ratio": rr["max_abs"] / peak,
                "ill_conditioned": fit.ill_conditioned,
                "overlay": (lams, curve.xi_prime, rr["bw_sum"], rr["remainder"]),
            }
        )
    return out


def cmd_breit_wigner(run: Run) -> dict:
    cfg = run.cfg
    _require(cfg, "distortion", "grid", "breit-wigner")
    run.tolerances.update({"im_rel_tol": 0.05, "re_tol_over_width": 0.5, "remainder_peak_max": 0.1})
    study = breit_wigner_study(cfg, run.workers)
    if not study:
        run.notes.append("no isolated narrow resonance in the region")
    for j, s in enumerate(study):
        lams, xp, bw, rem = s.pop("overlay")
        run.csv(f"bw_overlay_{j}.csv", ("lambda", "xi_prime", "bw_sum", "remainder"), list(zip(lams, xp, bw, rem)))
    return {"fits": study}


def count_sweep(cfg: RunConfig, workers: int = 1) -> dict:
    sec = cfg.sections["count"]
    q = cfg.region("count")
    lam0 = float(sec["disk_center"])
    k = float(sec.get("rho_over_h", 1.0))
    tol = float(sec.get("tol", 1e-6 * q.diameter))
    cap = int(sec.get("cap", 0))
    run = Run("count", cfg, Path("."), workers)
    theta0 = cfg.theta_validation()
    rows = []
    for h in cfg.h_list:
        rho = k * h
        box = RegionQuery(min(q.re_min, lam0 - rho), max(q.re_max, lam0 + rho), min(q.im_min, -rho), max(q.im_max, rho))
        box.validate(theta0, cfg.physical)
        res = _search(run, h, box, tol, cap)
        rows.append((h, count_in_region(res, q, theta0, cfg.physical), count_in_disk(res, lam0, rho, h=h)))
    hs = [r[0] for r in rows]
    s_reg, e_reg = _slope(hs, [r[1] for r in rows])
    s_disk, e_disk = _slope(hs, [r[2] for r in rows])
    return {"rows": rows, "region_slope": s_reg, "region_slope_stderr": e_reg, "disk_slope": s_disk, "disk_slope_stderr": e_disk,
            "disk_center": lam0, "rho_over_h": k}


def cmd_count(run: Run) -> dict:
    cfg = run.cfg
    _require(cfg, "distortion", "grid", "count")
    run.tolerances.update({"region_slope_band": [2.4, 3.6], "disk_slope_band": [1.4, 2.6]})
    res = count_sweep(cfg, run.workers)
    rows = []
    for h, nr, nd in res["rows"]:
        rows.append(("region", h, 1.0 / h, nr, res["region_slope"], res["region_slope_stderr"]))
        rows.append(("disk", h, 1.0 / h, nd, res["disk_slope"], res["disk_slope_stderr"]))
    run.csv("count_loglog.csv", ("quantity", "h", "inv_h", "count", "fitted_slope", "slope_stderr"), rows)
    res["rows"] = [{"h": h, "region_count": a, "disk_count": b} for h, a, b in res["rows"]]
    return res


def _phi(spec: dict):
    if spec["kind"] == "bump":
        return bump_function(spec["a"], spec["b"], spec.get("height", 1.0))
    return smooth_plateau(spec["a"], spec["b"], spec.get("ramp", 0.25 * (spec["b"] - spec["a"])))


def trace_sweep(cfg: RunConfig, workers: int = 1) -> dict:
    sec = cfg.sections["trace"]
    phi = _phi(sec["phi"])
    g0 = gamma0(phi, cfg.fields, cfg.physical)
    g0w = gamma0_from_weyl(phi, cfg.fields, cfg.physical)
    sweep, dev, bias = [], [], []
    for h in cfg.h_list:
        tr = numerical_trace_difference(phi, h, cfg.fields, cfg.physical, estimate_bias=bool(sec.get("estimate_bias", False)), workers=workers)
        sweep.append((h, tr.value))
        dev.append(tr.value * h**3 / g0 - 1.0 if g0 != 0 else math.nan)
        bias.append(tr.bias_estimate)
    slope, se = _slope([s[0] for s in sweep], [s[1] for s in sweep])
    return {"gamma0": g0, "gamma0_weyl": g0w, "trace_h_sweep": sweep, "fitted_slope": slope, "slope_stderr": se,
            "residuals": dev, "bias_estimates": bias}


def cmd_trace(run: Run) -> dict:
    cfg = run.cfg
    _require(cfg, "trace")
    run.tolerances.update({"gamma0_epsrel": 1e-10, "final_relative_deviation_max": 0.1})
    res = trace_sweep(cfg, run.workers)
    run.csv("trace_sweep.csv", ("h", "trace", "scaled_trace", "relative_deviation"),
            [(h, v, v * h**3, d) for (h, v), d in zip(res["trace_h_sweep"], res["residuals"])])
    return res


def cmd_parametrix(run: Run) -> dict:
    cfg = run.cfg
    sec = cfg.sections.get("parametrix", {})
    n = int(sec.get("n_points", 1000))
    rng = np.random.default_rng(cfg.seed)
    run.tolerances.update({"identity_defect_max": 1e-10, "ratio_max": 0.6, "free_error_max": 1e-10})
    ids = identity_suite(cfg.fields, cfg.physical, n, rng)
    model = ReducedModel(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in sec.get("reduced_model", {}).items()})
    hl = list(sec.get("h_list", [0.1, 0.05]))
    errs = propagator_error(model, hl)
    rows = [(h, e, (e / errs[i - 1][1]) if i else math.nan) for i, (h, e) in enumerate(errs)]
    run.csv("parametrix_sweep.csv", ("h", "L2_error", "ratio"), rows)
    free = ReducedModel(**{**model.__dict__, "v0": 0.0})
    h0 = hl[0]
    x, _ = _grid(free, h0)
    probes = _probes(free, h0, x)
    approx = fio_apply(free, h0, probes)
    free_err = max(float(np.linalg.norm(a - reference_propagator(free, h0, f)) / np.linalg.norm(f)) for a, f in zip(approx, probes))
    return {"identities": ids, "sweep": [{"h": h, "L2_error": e, "ratio": r} for h, e, r in rows], "free_error": free_err}


HANDLERS: dict[str, Callable[[Run], dict]] = {
    "validate": cmd_validate,
    "resonances": cmd_resonances,
    "ssf": cmd_ssf,
    "weyl": cmd_weyl,
    "breit-wigner": cmd_breit_wigner,
    "count": cmd_count,
    "trace": cmd_trace,
    "parametrix": cmd_parametrix,
}


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def _write_manifest(run: Run, status: str, results: dict, error: Optional[dict] = None) -> None:
    manifest = {
        "command": run.command,
        "status": status,
        "versions": versions(),
        "config_hash": run.cfg.config_hash,
        "config": run.cfg.raw,
        "h_list": list(run.cfg.h_list),
        "workers": run.workers,
        "tolerances": run.tolerances,
        "files": run.files,
        "notes": run.notes,
        "results": results,
    }
    if error is not None:
        manifest["error"] = error
    text = json.dumps(_clean(manifest), indent=2, sort_keys=True, allow_nan=False)
    (run.out / f"manifest_{run.command}.json").write_text(text + "\n")


def run(command: str, config_path, out: Optional[str] = None, workers: Optional[int] = None, stderr=None) -> int:
    """Execute one command; returns the process exit code."""
    stderr = stderr or sys.stderr
    if command not in HANDLERS:
        print(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}", file=stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(config_path)
        nworkers = resolve_workers(workers, cfg.workers)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"config error: {d}", file=stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    outdir = Path(out or cfg.output_dir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: cannot create output directory {outdir}: {exc.strerror}", file=stderr)
        return EXIT_CONFIG
    r = Run(command, cfg, outdir, nworkers)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            results = HANDLERS[command](r)
        except ConfigError as exc:
            for d in exc.diagnostics:
                print(f"config error: {d}", file=stderr)
            return EXIT_CONFIG
        except Exception as exc:  # numerical failure: report and keep the payload
            err = {"module": type(exc).__module__, "type": type(exc).__name__, "message": str(exc)}
            r.notes.extend(sorted({str(w.message) for w in caught}))
            _write_manifest(r, "error", {}, err)
            print(json.dumps({"error": err}), file=stderr)
            return EXIT_NUMERIC
    r.notes.extend(sorted({str(w.message) for w in caught}))
    _write_manifest(r, "ok", results)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drk", description="Semiclassical Dirac resonance experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--workers", type=int, default=None, help="worker threads (overrides DRK_WORKERS and the config)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return run(args.command, args.config, args.out, args.workers)


if __name__ == "__main__":
    sys.exit(main())
