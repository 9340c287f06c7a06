"""Command line entry point: ``divkf <scenario> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError
from .config import SCENARIOS, default_config, load_config
from .io import emit_results, predictions_to_csv, write_atomic
from .runner import run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INTERRUPTED = 0, 2, 3, 130


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divkf",
                                     description="Run a seeded filtering experiment sweep.")
    sub = parser.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        p = sub.add_parser(name, help=f"{name} sweep")
        p.add_argument("--config", type=Path, help="JSON config overlaying the defaults")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--trials", type=int, help="trials per sweep point")
        p.add_argument("--out-dir", type=Path, default=Path("results"))
        scale = p.add_mutually_exclusive_group()
        scale.add_argument("--desk-scale", dest="desk_scale", action="store_true", default=True,
                           help="small default sweeps (default)")
        scale.add_argument("--full-scale", dest="desk_scale", action="store_false",
                           help="full default sweeps, 20 trials")
        p.add_argument("--workers", type=int, help="worker processes across trials")
        p.add_argument("--format", choices=("csv", "json", "both"), default="both")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is not None:
            cfg = load_config(args.config, args.scenario, args.desk_scale)
        else:
            cfg = default_config(args.scenario, args.desk_scale)
        for key in ("seed", "trials", "workers"):
            value = getattr(args, key)
            if value is not None:
                setattr(cfg, key, value)
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    result = run_sweep(cfg)
    formats = ("csv", "json") if args.format == "both" else (args.format,)
    stem = cfg.scenario + ("_partial" if result.interrupted else "")
    try:
        if result.rows:
            paths = emit_results(result.rows, args.out_dir, stem, formats)
        else:
            paths = []
        if result.predictions:
            paths.append(write_atomic(args.out_dir / f"{stem}_predictions.csv",
                                      predictions_to_csv(result.predictions)))
    except OSError as exc:
        print(f"cannot write results: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in paths:
        print(path)
    return EXIT_INTERRUPTED if result.interrupted else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
