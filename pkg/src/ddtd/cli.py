"""Command-line entry point: ``ddtd init|run|resume|export|hv|config``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import driver, fem
from .field import export_vtk
from .initgen import ConvergenceWarning, generate_initial_set


def _cmd_init(args):
    options = {"dims": tuple(args.dims)} if args.dims else {}
    spec = fem.builtin_problem(args.problem, **options)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        fields = generate_initial_set(spec, args.count, seed=args.seed, n_jobs=args.threads)
    driver.write_initial_fields(fields, args.out)
    print(f"wrote {len(fields)} initial designs to {args.out}")
    return 0


def _summary(state):
    print(f"iteration {state.iteration}: {len(state.elite_ids)} elites, "
          f"normalized hypervolume {state.hv_trace[-1]:.6f}")


def _cmd_run(args):
    config = driver.load_config(args.config)
    if args.initial:
        config.initial_fields = args.initial
    state = driver.run(config)
    _summary(state)
    print(f"outputs in {config.output}")
    return 0


def _cmd_resume(args):
    state, config = driver.resume(args.checkpoint)
    if config is None:
        raise driver.CheckpointError(f"{args.checkpoint}: no config stored in checkpoint")
    if args.iterations:
        config.iterations = args.iterations
    state = driver.run(config, state=state)
    _summary(state)
    return 0


def _load_run(run_dir):
    path = Path(run_dir) / "checkpoint.npz"
    if not path.exists():
        raise FileNotFoundError(f"{run_dir}: no checkpoint.npz")
    return driver.resume(path)[0]


def _cmd_export(args):
    state = _load_run(args.run)
    out = Path(args.out) if args.out else Path(args.run) / "export"
    out.mkdir(parents=True, exist_ok=True)
    samples = state.samples if args.all else state.elites
    if args.format == "csv":
        driver.write_samples_csv(samples, out / ("samples.csv" if args.all else "front.csv"))
    else:
        for s in samples:
            export_vtk(s.field, out / f"{s.id:06d}.vtk")
    print(f"exported {len(samples)} designs to {out}")
    return 0


def _cmd_hv(args):
    path = Path(args.run) / "hv_trace.csv"
    trace = driver.read_trace_csv(path) if path.exists() else _load_run(args.run).hv_trace
    for i, v in enumerate(trace):
        print(f"{i}\t{v:.6f}")
    return 0


def _cmd_config(args):
    config = driver.RunConfig(problem=args.problem)
    sys.stdout.write(driver.config_to_ini(config))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddtd", description="Data-driven multi-objective topology design.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="generate an initial design set by a SIMP sweep")
    p.add_argument("--problem", required=True, choices=sorted(fem.PROBLEMS))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dims", type=int, nargs="+", help="override the problem's element grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_init)

    p = sub.add_parser("run", help="run the design loop from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--initial", help="directory written by 'ddtd init' (overrides the config)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("resume", help="continue a run from its checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--iterations", type=int, help="new iteration budget")
    p.set_defaults(func=_cmd_resume)

    p = sub.add_parser("export", help="write elites (or all samples) as CSV or VTK")
    p.add_argument("--run", required=True)
    p.add_argument("--format", choices=("csv", "vtk"), default="csv")
    p.add_argument("--out")
    p.add_argument("--all", action="store_true", help="every evaluated sample, not just elites")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("hv", help="print the normalized hypervolume trace")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_cmd_hv)

    p = sub.add_parser("config", help="print a config file with default values")
    p.add_argument("--problem", default="mech2d", choices=sorted(fem.PROBLEMS))
    p.set_defaults(func=_cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except (driver.CheckpointError, driver.InitialSetError, driver.IterationError,
            FileNotFoundError, ValueError) as exc:
        print(f"ddtd: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
