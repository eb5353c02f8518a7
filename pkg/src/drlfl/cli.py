"""Command line entry point.

    drlfl run <config> [--out DIR]
    drlfl sweep <config> --axis NAME --values LIST --target ACC [--out DIR]
    drlfl plot <run-dir>
    drlfl validate <config>

``--workers N`` and ``--seed S`` override the config. Exit codes: 0 success,
2 invalid config, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import harness

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drlfl", description="DRL-assisted federated learning simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", type=Path)
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides run.output_dir)")
        p.add_argument("--workers", type=int, default=None, help="parallel client-update workers")
        p.add_argument("--seed", type=int, default=None, help="global seed (overrides run.seed)")

    common(sub.add_parser("run", help="run one experiment"))
    p = sub.add_parser("sweep", help="rounds-to-target across parameter values")
    common(p)
    p.add_argument("--axis", required=True, help="parameter name, e.g. C, fl.E or E,B")
    p.add_argument("--values", required=True, help="comma list; colon-joined tuples for grouped axes")
    p.add_argument("--target", type=float, required=True, help="target test accuracy")
    p = sub.add_parser("plot", help="write plot-ready series next to metrics.csv")
    p.add_argument("run_dir", type=Path)
    p = sub.add_parser("validate", help="check a config file")
    p.add_argument("config", type=Path)
    return ap


def _read(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as e:
        raise RuntimeError(f"cannot read {path}: {e.strerror}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "validate":
            problems = config_mod.validate(_read(args.config))
            if problems:
                for v in problems:
                    print(v, file=sys.stderr)
                return EXIT_INVALID
            print("ok")
            return EXIT_OK
        if args.command == "plot":
            for path in harness.emit_plot_series(args.run_dir):
                print(path)
            return EXIT_OK
        text = _read(args.config)
        problems = config_mod.validate(text)
        if problems:
            for v in problems:
                print(v, file=sys.stderr)
            return EXIT_INVALID
        if args.command == "run":
            print(harness.run(text, args.out, args.workers, args.seed))
        else:
            print(harness.sweep(text, args.axis, args.values, args.target, args.out,
                                args.workers, args.seed))
        return EXIT_OK
    except config_mod.ConfigError as e:
        for v in e.violations:
            print(v, file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
