"""Command line entry point: ``descent-lab list`` and ``descent-lab run``."""

from __future__ import annotations

import argparse
import json
import sys

from . import catalog
from .scenario import EXIT_INVALID_CONFIG, ConfigError, emit, run, to_csv, to_json


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="descent-lab",
                                description="Test whether bundle maps descend to base maps.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list builtin scenarios")
    r = sub.add_parser("run", help="run a verification suite")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="builtin scenario name")
    src.add_argument("--config", help="path to a JSON scenario config")
    r.add_argument("--suite", choices=catalog.SUITES)
    r.add_argument("--tol", type=float, help="integrator tolerance (rtol = atol)")
    r.add_argument("--samples", type=int, help="criterion sample count")
    r.add_argument("--seed", type=int)
    r.add_argument("--horizon", type=float, help="finite stand-in for completeness")
    r.add_argument("--out", help="report path (default: stdout)")
    r.add_argument("--format", choices=("json", "csv-summary"), default="json")
    return p


def _list() -> int:
    for name in catalog.catalog():
        sc = catalog.scenario(name)
        expect = "confirmed" if sc.expected_exit == 0 else f"expected exit {sc.expected_exit}"
        print(f"{name:22s} {sc.suite:18s} {expect:18s} {sc.description}")
    return 0


def _load_config(args) -> dict:
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError([f"cannot read {args.config}: {exc.strerror}"]) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from exc
        if not isinstance(cfg, dict):
            raise ConfigError(["config must be a JSON object"])
    else:
        cfg = {"scenario": args.scenario}
    for key in ("suite", "tol", "samples", "seed", "horizon"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        return _list()
    try:
        report = run(_load_config(args))
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    if args.out:
        try:
            emit(report, args.out, args.format)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
    else:
        sys.stdout.write(to_json(report) if args.format == "json" else to_csv(report))
    print(f"{report.suite}: {report.verdict} (exit {report.exit_code})", file=sys.stderr)
    if report.error:
        print(f"error: {report.error}", file=sys.stderr)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
