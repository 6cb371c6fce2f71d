"""
Command-line front end.

    dyngain validate --scenario trunk-constant-40N
    dyngain run --scenario my_scenario.toml --out results/ --horizon 5
    dyngain batch --scenario trunk-smooth-step-slow-gain --scenario trunk-smooth-step-fast-gain --workers 2
    dyngain presets list

``--scenario`` takes a TOML path or a bundled preset name. Output goes to
``<out>/<scenario name>/``; ``--out`` defaults to ``$DYNGAIN_OUT`` or
``./dyngain-out``.

Exit codes: 0 success, 2 validation failure, 3 simulation abort,
4 bound violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from dyngain import __version__
from dyngain.bounds import check_trajectory_bound
from dyngain.errors import ConfigError, DynGainError, SimulationAborted, ValidationError
from dyngain.gain_schedule import kf_validate, verify_gain_condition
from dyngain.plants import GeneralizedState, certify_property1, verify_property2
from dyngain.scenario_io import dumps_scenario, preset_names, resolve_scenario
from dyngain.sim import comparison_summary, scenario_hash, simulate, simulate_baseline, write_columns

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ABORT = 3
EXIT_BOUND = 4

OUT_ENV = "DYNGAIN_OUT"
DEFAULT_OUT = "dyngain-out"

KF_GRID_POINTS = 10_000
PROPERTY_SAMPLES = 200
PROPERTY2_FD_STEP = 1e-5
PROPERTY2_TOL = 1e-6

logger = logging.getLogger("dyngain")


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


def _apply_overrides(scn, args):
    changes = {}
    if getattr(args, "step", None) is not None:
        changes["step"] = args.step
    if getattr(args, "horizon", None) is not None:
        changes["horizon"] = args.horizon
    if getattr(args, "tolerance", None) is not None:
        changes["tolerance"] = args.tolerance
    if getattr(args, "baseline", None) is not None:
        changes["baseline_gain"] = args.baseline
    return dataclasses.replace(scn, **changes) if changes else scn


def _sample_states(scn, rng, count):
    """Random states around the scenario's operating region."""
    n = scn.plant.n_dof
    span = max(1.0, float(np.max(np.abs(scn.q0))))
    out = []
    for _ in range(count):
        q = scn.q0 + rng.uniform(-span, span, n)
        qd = rng.uniform(-scn.qd_max, scn.qd_max, n)
        out.append(GeneralizedState(q, qd))
    return out


def validate_scenario(scn, seed=0):
    """Hard checks plus the (advisory) gain condition; returns a report dict.

    ``report["ok"]`` is False when a hard check fails. A failing gain
    condition only sets ``gain_condition.holds`` to False.
    """
    report = {"scenario": scn.name, "ok": True, "errors": [], "warnings": []}
    try:
        kf_rep = kf_validate(scn.kf, scn.horizon, KF_GRID_POINTS)
    except ValidationError as exc:
        report["ok"] = False
        report["errors"].append(f"K_F check failed: {exc}")
        return report
    report["kf"] = {
        "kind": scn.kf.kind,
        "b_lo": kf_rep.b_lo,
        "b_hi": kf_rep.b_hi,
        "b_tilde": kf_rep.b_tilde,
        "max_rate_ratio": kf_rep.max_ratio,
        "verified_constants": kf_rep.verified_constants,
    }
    if not kf_rep.verified_constants:
        report["warnings"].append("K_F constants are user-declared, not derived")

    cond = verify_gain_condition(scn.gain, kf_rep.b_tilde, kf=scn.kf)
    report["gain_condition"] = {
        "holds": cond.holds,
        "worst_margin": cond.worst_margin,
        "witness_s": cond.witness_s,
        "grid": [cond.grid_lo, cond.grid_hi],
        "holds_all_s": cond.holds_all_s,
        "range_truncated": cond.range_truncated,
    }
    if not cond.holds:
        report["warnings"].append(
            f"gain condition fails at s={cond.witness_s:.6g} (margin {cond.worst_margin:.6g}); "
            "the convergence envelope is not certified for this scenario"
        )

    rng = np.random.default_rng(seed)
    states = _sample_states(scn, rng, PROPERTY_SAMPLES)
    residual = max(verify_property2(scn.plant, s, PROPERTY2_FD_STEP) for s in states)
    declared = scn.plant.property_constants
    empirical = certify_property1(scn.plant, states)
    report["property1"] = {
        "declared": dataclasses.asdict(declared),
        "empirical": dataclasses.asdict(empirical),
        "enclosed": declared.encloses(empirical),
    }
    report["property2"] = {"max_residual": residual, "tolerance": PROPERTY2_TOL, "samples": len(states)}
    if not report["property1"]["enclosed"]:
        report["ok"] = False
        report["errors"].append("sampled plant constants escape the declared Property-1 bounds")
    if not residual < PROPERTY2_TOL:
        report["ok"] = False
        report["errors"].append(f"Mdot - (C + C^T) residual {residual:.3g} exceeds {PROPERTY2_TOL:g}")
    return report


def _print_validation(rep, stream):
    print(f"scenario: {rep['scenario']}", file=stream)
    if "kf" in rep:
        kf = rep["kf"]
        print(f"K_F ({kf['kind']}): b_lo={kf['b_lo']:.6g}  b_hi={kf['b_hi']:.6g}  b_tilde={kf['b_tilde']:.6g}", file=stream)
    if "gain_condition" in rep:
        gc = rep["gain_condition"]
        verdict = "PASS" if gc["holds"] else "WARNING"
        print(
            f"gain condition: {verdict}  worst margin={gc['worst_margin']:.6g} at s={gc['witness_s']:.6g}"
            f"  (grid {gc['grid'][0]:.6g}..{gc['grid'][1]:.6g})",
            file=stream,
        )
    if "property1" in rep:
        p1 = rep["property1"]
        verdict = "PASS" if p1["enclosed"] else "FAIL"
        emp = p1["empirical"]
        print(
            f"property 1: {verdict}  sampled eig(M) in [{emp['k_m_lo']:.6g}, {emp['k_m_hi']:.6g}], "
            f"k_c~{emp['k_c']:.6g}, k_g~{emp['k_g']:.6g}",
            file=stream,
        )
    if "property2" in rep:
        p2 = rep["property2"]
        verdict = "PASS" if p2["max_residual"] < p2["tolerance"] else "FAIL"
        print(f"property 2: {verdict}  max residual={p2['max_residual']:.3g} over {p2['samples']} states", file=stream)
    for w in rep["warnings"]:
        print(f"warning: {w}", file=stream)
    for e in rep["errors"]:
        print(f"error: {e}", file=stream)


def _plot_columns(log):
    return [("t", log.t), ("d_tilde_norm", log.d_tilde_norm), ("bound", log.bound), ("alpha", log.alpha)]


def _jsonable(obj):
    # strict JSON has no inf/nan; spell them as strings
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if np.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n")


def run_scenario(scn, out_dir: Path, seed=0, stream=None):
    """Validate, simulate and write every artifact; returns an exit code."""
    stream = stream or sys.stdout
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "scenario.toml").write_text(dumps_scenario(scn))

    rep = validate_scenario(scn, seed)
    _write_json(out_dir / "validation.json", rep)
    if not rep["ok"]:
        _print_validation(rep, stream)
        return EXIT_VALIDATION

    summary = {
        "scenario": scn.name,
        "scenario_hash": scenario_hash(scn),
        "gain_condition_holds": rep["gain_condition"]["holds"],
        "sigma_tilde": scn.certificate().sigma_tilde,
    }
    code = EXIT_OK
    try:
        log = simulate(scn)
    except SimulationAborted as exc:
        summary.update(aborted=True, abort_reason=exc.reason, message=str(exc))
        if exc.log is not None:
            exc.log.to_csv(out_dir / "trajectory.csv")
            write_columns(out_dir / "plot_data.csv", _plot_columns(exc.log))
            summary["partial"] = exc.log.summary()
        _write_json(out_dir / "summary.json", summary)
        print(f"{scn.name}: simulation aborted ({exc.reason}): {exc}", file=stream)
        return EXIT_ABORT

    log.to_csv(out_dir / "trajectory.csv")
    write_columns(out_dir / "plot_data.csv", _plot_columns(log))
    bound_rep = check_trajectory_bound(scn.certificate(), log, tolerance=scn.tolerance)
    bound_dict = bound_rep.to_dict()
    bound_dict["certified"] = rep["gain_condition"]["holds"]
    _write_json(out_dir / "bound_report.json", bound_dict)
    summary.update(log.summary())
    summary.update(
        aborted=False,
        wall_clock_s=log.metadata["wall_clock_s"],
        max_ratio=bound_rep.max_ratio,
        violations=len(bound_rep.violations),
    )
    if not bound_rep.ok:
        code = EXIT_BOUND

    if scn.baseline_gain is not None:
        try:
            base = simulate_baseline(scn)
        except SimulationAborted as exc:
            summary["baseline_aborted"] = exc.reason
            _write_json(out_dir / "summary.json", summary)
            print(f"{scn.name}: baseline run aborted ({exc.reason}): {exc}", file=stream)
            return EXIT_ABORT
        base.to_csv(out_dir / "baseline_trajectory.csv")
        write_columns(out_dir / "baseline_plot_data.csv", _plot_columns(base))
        comparison = comparison_summary(log, base)
        _write_json(out_dir / "comparison.json", comparison)
        summary["comparison"] = comparison

    _write_json(out_dir / "summary.json", summary)
    status = "ok" if bound_rep.ok else f"{len(bound_rep.violations)} bound violation(s)"
    print(
        f"{scn.name}: {status}; final |d_tilde|={summary['final_d_tilde_norm']:.4g}, "
        f"max ratio to envelope={bound_rep.max_ratio:.4g} -> {out_dir}",
        file=stream,
    )
    return code


def cmd_validate(args):
    scn = _apply_overrides(resolve_scenario(args.scenario), args)
    rep = validate_scenario(scn, args.seed)
    _print_validation(rep, sys.stdout)
    return EXIT_OK if rep["ok"] else EXIT_VALIDATION


def cmd_run(args):
    scn = _apply_overrides(resolve_scenario(args.scenario), args)
    out_root = Path(args.out) if args.out else default_out_root()
    return run_scenario(scn, out_root / scn.name, args.seed)


def _batch_worker(ref, out_root, overrides, seed):
    # runs in a worker process; each scenario owns its output subdirectory
    ns = argparse.Namespace(**overrides)
    try:
        scn = _apply_overrides(resolve_scenario(ref), ns)
    except (ConfigError, DynGainError) as exc:
        print(f"{ref}: {exc}", file=sys.stderr)
        return ref, EXIT_VALIDATION
    return ref, run_scenario(scn, Path(out_root) / scn.name, seed)


def cmd_batch(args):
    refs = list(args.scenario or []) + list(args.scenarios or [])
    if args.all_presets:
        refs += preset_names()
    if not refs:
        print("batch: no scenarios given", file=sys.stderr)
        return EXIT_VALIDATION
    out_root = str(Path(args.out) if args.out else default_out_root())
    overrides = {k: getattr(args, k) for k in ("step", "horizon", "tolerance", "baseline")}
    results = []
    if args.workers <= 1:
        results = [_batch_worker(r, out_root, overrides, args.seed) for r in refs]
    else:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(_batch_worker, r, out_root, overrides, args.seed) for r in refs]
            results = [f.result() for f in futures]
    for ref, code in results:
        print(f"{ref}: exit {code}")
    return max(code for _, code in results)


def cmd_presets(args):
    for name in preset_names():
        print(name)
    return EXIT_OK


def _add_overrides(p):
    p.add_argument("--step", type=float, help="base integration step [s]")
    p.add_argument("--horizon", type=float, help="simulated duration [s]")
    p.add_argument("--tolerance", type=float, help="relative tolerance of the envelope check")
    p.add_argument("--baseline", type=float, help="also run a constant-gain observer with this gain")
    p.add_argument("--seed", type=int, default=0, help="seed for the random plant-state checks")


def build_parser():
    parser = argparse.ArgumentParser(prog="dyngain", description="Dynamic-gain disturbance observer simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings from the bound checker")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario without simulating")
    p.add_argument("--scenario", required=True, help="TOML file or preset name")
    _add_overrides(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate one scenario and write its artifacts")
    p.add_argument("--scenario", required=True, help="TOML file or preset name")
    p.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    _add_overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run several scenarios, optionally in parallel")
    p.add_argument("scenarios", nargs="*", help="TOML files or preset names")
    p.add_argument("--scenario", action="append", help="TOML file or preset name (repeatable)")
    p.add_argument("--all-presets", action="store_true", help="run every bundled preset")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    _add_overrides(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("presets", help="bundled scenarios")
    psub = p.add_subparsers(dest="presets_command", required=True)
    pl = psub.add_parser("list", help="print preset names")
    pl.set_defaults(func=cmd_presets)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DynGainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
