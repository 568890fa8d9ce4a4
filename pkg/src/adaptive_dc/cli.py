"""Command-line entry point: ``adaptive-dc {simulate,verify,compare}``.

Exit codes: 0 ok, 1 check failure, 2 configuration error, 3 numerical abort.
Log verbosity comes from ``ADAPTIVE_DC_LOG`` (DEBUG, INFO, WARNING, ...).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import verification_suite
from .config import ConfigError, RunConfig, load_config
from .report import (
    COMPARISON_SCHEMA,
    SUMMARY_SCHEMA,
    compare_summaries,
    summarize,
    write_json,
    write_metrics_csv,
    write_trajectory_csv,
)
from .scenario import current_sharing_error, voltage_deviation_pct
from .simkernel import SimulationAborted, integrate

log = logging.getLogger("adaptive_dc")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3
CONTROLLERS = ("c1", "c2", "c3")


def _setup_logging():
    level = os.environ.get("ADAPTIVE_DC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)


def _run(cfg: RunConfig, name: str):
    controller = cfg.controller(name)
    log.info("simulating %s over %.6g s at step %g s", name, cfg.scenario.duration_s,
             cfg.integrator.step_s)
    traj = integrate(cfg.params, controller, cfg.graph, cfg.scenario, cfg.integrator,
                     x0=cfg.x0, noise=cfg.noise, backend=cfg.backend)
    return traj, summarize(traj, cfg.params, controller, cfg.scenario)


def _write_run(out: Path, cfg: RunConfig, name: str, traj, summary):
    out.mkdir(parents=True, exist_ok=True)
    controller = cfg.controller(name)
    W = getattr(controller, "W", np.ones(cfg.n_s))
    write_trajectory_csv(out / "trajectory.csv", traj)
    write_metrics_csv(out / "metrics.csv", traj, cfg.params, W, controller.V_dc_star, name)
    write_json(out / "summary.json", summary, SUMMARY_SCHEMA)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    try:
        traj, summary = _run(cfg, args.controller)
    except SimulationAborted as exc:
        log.error("%s", exc)
        return EXIT_ABORT
    _write_run(Path(args.out), cfg, args.controller, traj, summary)
    f = summary["final"]
    print(f"{args.controller}: V_dc = {f['V_dc_V']:.6f} V ({f['V_deviation_pct']:.4f} %), "
          f"sharing error {f['sharing_error_A']:.4g} A, "
          f"theta-sum drift {summary['invariant']['theta_sum_drift']:.3g}")
    print(f"wrote {args.out}/trajectory.csv, metrics.csv, summary.json")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    checks = verification_suite(cfg.params, cfg.controller("c1"), cfg.graph,
                                np.random.default_rng(cfg.seed))
    width = max(len(c.name) for c in checks)
    print(f"{'check':<{width}}  {'value':>12}  {'limit':>12}  result")
    for c in checks:
        print(f"{c.name:<{width}}  {c.value:>12.4g}  {c.limit:>12.4g}  {'PASS' if c.passed else 'FAIL'}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    with ThreadPoolExecutor(max_workers=len(CONTROLLERS)) as pool:
        futures = {name: pool.submit(_run, cfg, name) for name in CONTROLLERS}
        results, aborted = {}, False
        for name, fut in futures.items():
            try:
                results[name] = fut.result()
            except SimulationAborted as exc:
                log.error("%s: %s", name, exc)
                aborted = True
    if aborted:
        return EXIT_ABORT
    for name, (traj, summary) in results.items():
        _write_run(out / name, cfg, name, traj, summary)
    _write_aligned(out / "compare_metrics.csv", cfg, results)
    comp = compare_summaries({k: v[1] for k, v in results.items()})
    write_json(out / "comparison.json", comp, COMPARISON_SCHEMA)
    print("steady-state voltage deviation (low to high):", " < ".join(comp["voltage_deviation_rank"]))
    print("steady-state sharing error (low to high):   ", " < ".join(comp["sharing_error_rank"]))
    return EXIT_OK


def _write_aligned(path: Path, cfg: RunConfig, results):
    """One long-format file with every controller's metrics on a shared time grid."""
    W = cfg.controller("c1").W
    V_star = cfg.controller("c1").V_dc_star
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "controller", "metric", "value"])
        for name, (traj, _) in results.items():
            vd = voltage_deviation_pct(traj, V_star)
            se = current_sharing_error(traj, W)
            for k, t in enumerate(traj.t):
                w.writerow([repr(float(t)), name, "voltage_deviation_pct", repr(float(vd[k]))])
                w.writerow([repr(float(t)), name, "current_sharing_error_A", repr(float(se[k]))])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adaptive-dc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one controller and export traces")
    p.add_argument("config")
    p.add_argument("--controller", choices=CONTROLLERS, default="c1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the analytic checks on the adaptive controller")
    p.add_argument("config")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="run all three controllers on one scenario")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
