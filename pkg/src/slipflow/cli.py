"""Command line front end: run, sweep, check and report subcommands.

Heavy imports happen inside the handlers so --threads can pin the BLAS
thread count through the environment before numpy is first loaded.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("slipflow")

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slipflow",
        description="Penalized Galerkin scheme for a rigid body in "
                    "compressible flow with Navier slip boundaries")
    parser.add_argument("--threads", type=int, default=1,
                        help="BLAS/OpenMP thread count (default 1, "
                             "keeps runs bit-reproducible)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--out", type=Path, default=Path("run_out"))
    p_run.add_argument("--seed", type=int, default=None,
                       help="recorded in the summary; the scheme itself is "
                            "deterministic")

    p_sweep = sub.add_parser("sweep", help="parameter limit study")
    p_sweep.add_argument("config", type=Path)
    p_sweep.add_argument("--param", required=True,
                         choices=("delta", "epsilon", "N"))
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated parameter values")
    p_sweep.add_argument("--out", type=Path, default=Path("sweep_out"))
    p_sweep.add_argument("--seed", type=int, default=None)

    p_check = sub.add_parser("check", help="weak-residual audit of a snapshot")
    p_check.add_argument("snapshot", type=Path)
    p_check.add_argument("--config", type=Path, required=True)

    p_report = sub.add_parser("report", help="emit acceptance tables for a run")
    p_report.add_argument("run_dir", type=Path)
    return parser


def _cmd_run(args) -> int:
    from .config_io import load_config
    from . import stepper
    config = load_config(args.config)
    summary = stepper.run(config, args.out, seed=args.seed)
    status = "halted by collision guard" if summary["halted"] else "completed"
    print(f"{status}: {summary['steps']} steps to t = {summary['t_final']:g} "
          f"in {summary['wall_time_s']:.1f} s")
    print(f"  min energy slack  {summary['min_slack']:+.3e}  "
          f"(tolerance -{summary['slack_tolerance']:.3e})")
    print(f"  max mass drift    {summary['max_mass_drift']:.3e}")
    print(f"  envelope margin   {summary['min_envelope_margin']:+.3e}")
    print(f"  artifacts in      {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    from .config_io import load_config
    from . import limits
    config = load_config(args.config)
    raw = [v for v in args.values.split(",") if v.strip()]
    values = [int(v) if args.param == "N" else float(v) for v in raw]
    report = limits.run_sweep(config, args.param, values, args.out)
    for i, v in enumerate(report.values):
        print(f"{args.param} = {v:g}: r_delta = {report.metrics['r_delta'][i]:.6e}  "
              f"slip_jump = {report.metrics['slip_jump'][i]:.6e}  "
              f"weak_residual = {report.metrics['weak_residual'][i]:.3e}")
    for name, fit in report.slopes.items():
        print(f"slope_{name} = {fit.slope:.4f}  (R^2 = {fit.r2:.5f})")
    for v, msg in report.errors.items():
        print(f"failed at {args.param} = {v:g}: {msg}", file=sys.stderr)
    print(f"rates table in {args.out / 'rates.csv'}")
    return 1 if report.errors else 0


def _cmd_check(args) -> int:
    from .config_io import load_config, read_snapshot
    from . import limits
    config = load_config(args.config)
    snapshot = read_snapshot(args.snapshot)
    residual, scale = limits.galerkin_residual(snapshot, config)
    tol = 10.0 * 1e-12 * scale
    verdict = "pass" if residual <= tol else "FAIL"
    print(f"snapshot t = {snapshot.time:g}, {snapshot.n_modes} modes")
    print(f"galerkin residual {residual:.3e} vs tolerance {tol:.3e}: {verdict}")
    return 0 if residual <= tol else 1


def _cmd_report(args) -> int:
    summary_path = args.run_dir / "summary.json"
    summary = json.loads(summary_path.read_text())
    rows = [
        ("energy slack min", summary["min_slack"],
         f">= -{summary['slack_tolerance']:.3e}",
         summary["min_slack"] >= -summary["slack_tolerance"]),
        ("mass drift max", summary["max_mass_drift"],
         "<= 1e-09", summary["max_mass_drift"] <= 1e-9),
        ("envelope margin min", summary["min_envelope_margin"],
         f">= -{summary['envelope_tolerance']:.3e}",
         summary["min_envelope_margin"] >= -summary["envelope_tolerance"]),
    ]
    if summary.get("halted"):
        rows.append(("collision bound", summary["collision_time_bound"],
                     f"<= halt time {summary['halt_time']:g}",
                     summary["collision_time_bound"] <= summary["halt_time"]))
    width = max(len(r[0]) for r in rows)
    ok = True
    for name, value, bound, passed in rows:
        ok &= passed
        print(f"{name:<{width}}  {value:+.6e}  {bound:<18}  "
              f"{'pass' if passed else 'FAIL'}")
    rates = args.run_dir / "rates.csv"
    if rates.exists():
        footers = [ln[2:] for ln in rates.read_text().splitlines()
                   if ln.startswith("# ")]
        for line in footers:
            print(line)
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    for var in _THREAD_VARS:
        os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    from .errors import SlipflowError
    handler = {"run": _cmd_run, "sweep": _cmd_sweep,
               "check": _cmd_check, "report": _cmd_report}[args.command]
    try:
        return handler(args)
    except SlipflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
