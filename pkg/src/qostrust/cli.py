"""Command line entry point.

    qostrust validate --scenario paper_scenario
    qostrust run --scenario paper_scenario --mode virtual --out results/ [--seed N]
    qostrust run --scenario my.toml --mode wall --out results/ --trust-port 8080
    qostrust export --input results/summary.json --format csv --out table.csv

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_scenario
from .errors import ConfigError, QosTrustError
from .runner import export, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qostrust", description="Trust evaluation of black-box data services.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    validate = sub.add_parser("validate", help="check a scenario file")
    validate.add_argument("--scenario", required=True, help="path, or a bundled name such as paper_scenario")

    run = sub.add_parser("run", help="run a scenario and write trust reports")
    run.add_argument("--scenario", required=True, help="path, or a bundled name such as paper_scenario")
    run.add_argument("--mode", choices=("virtual", "wall"), default="virtual")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=_seed, help="override the scenario rng_seed")
    run.add_argument("--bind", default="127.0.0.1", help="host for the wall-mode endpoints")
    run.add_argument("--trust-port", type=int, help="serve the trust API on this port (wall mode)")
    run.add_argument("--speed", type=float, default=1.0,
                     help="simulated seconds per wall second (wall mode)")

    exp = sub.add_parser("export", help="convert a trust report or summary")
    exp.add_argument("--input", required=True, help="trust_report_*.json or summary.json")
    exp.add_argument("--format", choices=("json", "csv"), required=True)
    exp.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            cfg = load_scenario(args.scenario)
            print(f"{cfg.name}: {len(cfg.services)} services, {cfg.duration:g} s, "
                  f"{len(cfg.sweep)} sweep points")
            return EXIT_OK
        if args.command == "run":
            cfg = load_scenario(args.scenario)
            if args.seed is not None:
                cfg = cfg.with_seed(args.seed)
            options = {}
            if args.mode == "wall":
                options = {"host": args.bind, "trust_port": args.trust_port, "speed": args.speed}
            result = run_scenario(cfg, args.mode, args.out, **options)
            for ranking in result.rankings:
                print(f"alpha={ranking.weights.alpha:g} beta={ranking.weights.beta:g}: "
                      + " ".join(ranking.order))
            return EXIT_OK
        with open(args.input) as fh:
            doc = json.load(fh)
        export(doc, args.format, args.out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QosTrustError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
