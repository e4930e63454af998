"""Command-line front end: ``bayesest {simulate,estimate,compare}``.

Exit codes: 0 on success (possibly with warnings), 1 when output cannot be
written, 2 for configuration errors, 3 when every filter run failed
numerically.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import re
import sys

import numpy as np

from .bench import THREADS_ENV, compare, run_filter
from .config import ConfigError, default_config, load

log = logging.getLogger("bayesest")

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_FAILED = 3
TRAJECTORY_SCHEMA = "bayesest-trajectory v1"


def _safe(label):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def trajectory_csv(traj, dt, seed, model_hash):
    """States ``x_0..x_K`` with outputs and inputs aligned on the same ``k``.

    Row ``k`` holds ``x_k``, ``y_k`` (NaN at ``k=0``) and ``u_k`` (NaN at
    ``k=K``).
    """
    buf = io.StringIO()
    buf.write(f"# {TRAJECTORY_SCHEMA}\n# seed={seed} dt={dt!r} model_hash={model_hash}\n")
    n_x, n_y = traj.states.shape[1], traj.outputs.shape[1]
    n_u = 0 if traj.inputs is None else traj.inputs.shape[1]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "t"] + [f"x_{i}" for i in range(n_x)] + [f"y_{i}" for i in range(n_y)] + [f"u_{i}" for i in range(n_u)])
    nan_y, nan_u = np.full(n_y, np.nan), np.full(n_u, np.nan)
    for k in range(traj.K + 1):
        y = traj.outputs[k - 1] if k > 0 else nan_y
        u = traj.inputs[k] if (n_u and k < traj.K) else nan_u
        vals = np.concatenate([traj.states[k], y, u])
        w.writerow([k, repr(k * dt)] + [repr(float(v)) for v in vals])
    return buf.getvalue()


def _seeds(cfg):
    return [cfg.seed + r for r in range(cfg.runs)]


def cmd_simulate(cfg, out):
    scenario = cfg.build_scenario()
    digest = cfg.model_hash()
    paths = []
    for seed in _seeds(cfg):
        traj = scenario.simulate(seed)
        path = os.path.join(out, f"trajectory_seed{seed}.csv")
        with open(path, "w", newline="") as fh:
            fh.write(trajectory_csv(traj, scenario.dt, seed, digest))
        paths.append(path)
    log.info("wrote %d trajectory file(s) to %s", len(paths), out)
    return EXIT_OK


def cmd_estimate(cfg, out):
    scenario = cfg.build_scenario()
    total = failed = 0
    for seed in _seeds(cfg):
        traj = scenario.simulate(seed)
        for fc in cfg.filters:
            tr = run_filter(scenario, fc, traj, seed)
            tr.to_csv(os.path.join(out, f"trace_{_safe(fc.name)}_seed{seed}.csv"))
            total += 1
            if tr.diverged:
                failed += 1
                log.warning("%s failed on seed %d at k=%d: %s", fc.name, seed, tr.diverged_at, tr.failure)
    if failed == total:
        log.error("every filter run failed")
        return EXIT_FAILED
    return EXIT_OK


def cmd_compare(cfg, out):
    scenario = cfg.build_scenario()
    table = compare(scenario, cfg.filters, cfg.runs, cfg.seed)
    table.to_csv(os.path.join(out, "comparison.csv"))
    table.timing_csv(os.path.join(out, "timing.csv"))
    for r in table.rows:
        if r.diverged:
            log.warning("%s diverged in %d of %d runs", r.label, r.diverged, r.runs)
    if all(r.failed for r in table.rows):
        log.error("every filter failed on every run")
        return EXIT_FAILED
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "compare": cmd_compare}


def build_parser():
    p = argparse.ArgumentParser(
        prog="bayesest",
        description="Simulate state-space scenarios, run Bayesian filters and compare them.",
        epilog=f"Environment: {THREADS_ENV}=N runs Monte Carlo replicas on N threads (default 1). "
        "Exit codes: 0 success, 1 output error, 2 configuration error, 3 all filter runs failed.",
    )
    p.add_argument("command", choices=sorted(COMMANDS), help="what to run")
    p.add_argument("--config", metavar="PATH", help="experiment YAML (default: bundled motor comparison)")
    p.add_argument("--out", metavar="DIR", help="output directory (default: the config's 'output')")
    p.add_argument("--seed", type=int, metavar="N", help="base seed; replica r uses N + r")
    p.add_argument("--runs", type=int, metavar="N", help="number of Monte Carlo replicas")
    p.add_argument("--filters", metavar="LIST", help="comma-separated filter labels or types to keep")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    logging.captureWarnings(True)
    try:
        cfg = load(args.config) if args.config else default_config()
        selection = None if args.filters is None else args.filters.split(",")
        cfg = cfg.with_overrides(seed=args.seed, runs=args.runs, filters=selection)
    except ConfigError as exc:
        for path, message in exc.errors:
            print(f"config error: {path}: {message}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.output
    try:
        os.makedirs(out, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
