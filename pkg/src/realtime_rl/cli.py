"""Command-line entry point: ``realtime-rl {simulate,sweep,nstar,verify}``.

Exit codes: 0 success, 1 config error, 2 run error, 3 verify failure.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .harness import ConfigError, RunError

EXIT_OK, EXIT_CONFIG, EXIT_RUN, EXIT_VERIFY = 0, 1, 2, 3


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.mode is not None:
        changes["clock"] = args.mode
    return cfg.replace(**changes) if changes else cfg


def _values(text: str) -> list:
    out = []
    for item in text.split(";" if ";" in text else ","):
        item = item.strip()
        if not item:
            continue
        try:
            out.append(int(item))
        except ValueError:
            try:
                out.append(float(item))
            except ValueError:
                out.append(item)
    return out


def cmd_simulate(args) -> int:
    cfg = _load(args)
    try:
        report = harness.run(cfg)
    except RunError as exc:
        if exc.report is not None:
            harness.emit([exc.report], args.format, args.out)
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN
    harness.emit([report], args.format, args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = _values(args.values)
    try:
        reports, _ = harness.sweep(cfg, args.param, values, measure=args.measure, summary_path=args.summary)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    harness.emit(reports, args.format, args.out)
    return EXIT_OK


def cmd_nstar(args) -> int:
    cfg = _load(args)
    try:
        n = harness.measure_n_star(cfg, args.threshold, param=args.param, cap=args.cap)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(n)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .acceptance import run_all

    only = [s.strip() for s in args.only.split(",")] if args.only else None
    results = run_all(only=only, echo=print)
    return EXIT_OK if all(r.ok for r in results) else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="realtime-rl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="INI experiment config")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--mode", choices=("virtual", "wallclock"), help="override [run] clock")
        p.add_argument("--out", default="-", help="output path ('-' for stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="json")

    p = sub.add_parser("simulate", help="run one configured experiment")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="one run per parameter value")
    common(p)
    p.add_argument("--param", required=True, choices=harness.SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma list; use ';' when values contain commas")
    p.add_argument("--measure", choices=("n_inference", "n_learn"), help="search N* at each value")
    p.add_argument("--summary", help="summary CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("nstar", help="smallest process count meeting the threshold")
    common(p)
    p.add_argument("--param", choices=("n_inference", "n_learn"), default="n_inference")
    p.add_argument("--threshold", type=float)
    p.add_argument("--cap", type=int)
    p.set_defaults(func=cmd_nstar)

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--only", help="comma list of criterion ids, e.g. 1,3,7")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunError as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
