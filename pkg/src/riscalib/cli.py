"""Command-line entry point: ``riscalib run | validate | list``."""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .bounds import ConvergenceError, UnidentifiableError
from .experiments import EXPERIMENTS, ScenarioError, bundled_scenarios, load_scenario, run_experiment, write_csv

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _default_scenario(experiment: str):
    for name, path in sorted(bundled_scenarios().items()):
        if load_scenario(path).experiment == experiment:
            return path
    raise ScenarioError(f"no bundled scenario for {experiment}")


def _cmd_run(args) -> int:
    path = args.scenario or _default_scenario(args.experiment)
    scn = load_scenario(path)
    t0 = time.perf_counter()
    rows = run_experiment(args.experiment, scn, seed=args.seed, workers=args.workers, full=args.full)
    write_csv(rows, args.out, args.experiment)
    flagged = sum(r.status != "ok" for r in rows)
    print(f"{args.experiment}: {len(rows)} rows ({flagged} flagged) -> {args.out} "
          f"in {time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def _cmd_validate(args) -> int:
    scn = load_scenario(args.scenario)
    print(f"{args.scenario}: ok ({scn.name}, {scn.experiment}, {scn.ris.n_elements} RIS elements)")
    return EXIT_OK


def _cmd_list(args) -> int:
    bundled = {}
    for name, path in sorted(bundled_scenarios().items()):
        bundled.setdefault(load_scenario(path).experiment, name)
    for info in EXPERIMENTS.values():
        print(f"{info.name:20s} {info.figure:8s} {info.summary}  [scenario: {bundled.get(info.name, '-')}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riscalib", description="RIS calibration bounds and experiments")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a named experiment and write a CSV")
    run.add_argument("--experiment", required=True, choices=sorted(EXPERIMENTS))
    run.add_argument("--scenario", help="scenario JSON (default: the bundled one)")
    run.add_argument("--out", required=True, help="output CSV path")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--full", action="store_true", help="ignore the desk-scale size overrides")
    run.set_defaults(func=_cmd_run)

    val = sub.add_parser("validate", help="check a scenario file against the schema")
    val.add_argument("--scenario", required=True)
    val.set_defaults(func=_cmd_validate)

    lst = sub.add_parser("list", help="list experiments and the figure each reproduces")
    lst.set_defaults(func=_cmd_list)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors count as validation errors
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, UnidentifiableError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
