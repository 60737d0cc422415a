"""Command-line entry point: ``tapkinn <subcommand> [--config PATH] [--out DIR] ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 missing or mismatched artifact.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import PRESET_CONFIGS, ConfigError, load_config
from .io import MissingArtifact
from .kinn import TrainingDivergence
from .reactor import SimulationError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ARTIFACT = 0, 2, 3, 4

SINGLE = ("simulate", "preprocess", "fit", "evaluate", "baseline")


def _parser():
    p = argparse.ArgumentParser(prog="tapkinn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SINGLE + ("run", "compare"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None,
                        help=f"TOML file or preset name ({', '.join(sorted(PRESET_CONFIGS))})")
        sp.add_argument("--out", default="run", help="run directory (default: ./run)")
        sp.add_argument("--seed", type=int, default=None, help="override KINN and noise seeds")
        sp.add_argument("--stages", default=None,
                        help="comma-separated subset of " + ",".join(pipeline.STAGES))
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "compare":
            sp.add_argument("reports", nargs="+", help="fit_report / baseline_report files")
    return p


def _stages(arg, default):
    if arg is None:
        return default
    stages = tuple(s.strip() for s in arg.split(",") if s.strip())
    bad = set(stages) - set(pipeline.STAGES)
    if bad:
        raise ConfigError(f"--stages: unknown stages {sorted(bad)}")
    return stages


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            try:
                _, _, text = pipeline.compare_runs(args.reports, out / "comparison.csv",
                                                   out / "comparison.txt")
            except ValueError as exc:
                raise ConfigError(f"compare: {exc}") from None
            print(text, end="")
            return EXIT_OK
        cfg = load_config(args.config, args.seed)
        if args.command == "run":
            stages = _stages(args.stages, pipeline.STAGES)
            if "sweep" in cfg:
                _, _, text = pipeline.run_sweep(cfg, args.out, stages)
                print(text, end="")
            else:
                pipeline.run_stages(cfg, args.out, stages)
        else:
            stages = _stages(args.stages, (args.command,))
            if stages != (args.command,):
                raise ConfigError(f"--stages: use 'run' to chain stages, got {','.join(stages)}")
            pipeline.run_stages(cfg, args.out, stages)
        print(f"{args.command}: done -> {args.out}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (SimulationError, TrainingDivergence, FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
