"""Command line entry point ``fe``.

Exit codes: 0 when every check passes, 2 when a scientific check fails and 1
for usage or validation errors.
"""
from __future__ import annotations

import argparse
import json
import sys

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _cmd_run(args) -> int:
    from .harness import ConfigError, load_config, run

    try:
        cfg = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"fe: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        rec = run(cfg, out_dir=args.out)
    except ValueError as exc:
        print(f"fe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        # undersampling, partition or plaque construction failures
        print(f"fe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    print(json.dumps({"kind": rec.kind, "passed": rec.passed, "out_dir": rec.out_dir,
                      "config_hash": rec.config_hash, "wall_time": round(rec.wall_time, 3)}))
    return EXIT_OK if rec.passed else EXIT_FAILED


def _cmd_list(args) -> int:
    from .harness import list_experiments

    for e in list_experiments():
        if args.json:
            continue
        print(f"{e['name']:<12} {e['anchor']}")
        print(f"{'':<12} {e['description']}")
        print(f"{'':<12} required: {', '.join(e['required'])}")
    if args.json:
        print(json.dumps(list_experiments(), indent=2))
    return EXIT_OK


def _cmd_audit(args) -> int:
    from .measures import EmpiricalMeasure
    from .partitions import FinitePartition, boundary_decay_audit

    try:
        with open(args.partition, encoding="utf-8") as fh:
            part = FinitePartition.from_json(fh.read())
        mu = EmpiricalMeasure.from_csv(args.samples)
    except (OSError, ValueError, KeyError) as exc:
        print(f"fe: cannot load inputs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if mu.dimension != part.dimension:
        print(f"fe: samples are {mu.dimension}-d but the partition is {part.dimension}-d", file=sys.stderr)
        return EXIT_USAGE
    if not 0 <= args.slot < len(part.constants):
        print(f"fe: slot {args.slot} out of range (0..{len(part.constants) - 1})", file=sys.stderr)
        return EXIT_USAGE
    rep = boundary_decay_audit(part, mu, args.i_max, slot=args.slot)
    print("i,width,mass,bound,ok")
    for i, w, m, b, ok in rep.table:
        print(f"{i},{w!r},{m!r},{b!r},{'true' if ok else 'false'}")
    return EXIT_OK if rep.passed else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fe", description="Partial entropy experiments on torus maps.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    r = sub.add_parser("run", help="run an experiment configuration")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    r.set_defaults(func=_cmd_run)
    ls = sub.add_parser("list", help="list experiment kinds")
    ls.add_argument("--json", action="store_true")
    ls.set_defaults(func=_cmd_list)
    a = sub.add_parser("audit", help="audit a saved partition against samples")
    a.add_argument("partition")
    a.add_argument("samples")
    a.add_argument("--slot", type=int, default=0)
    a.add_argument("--i-max", type=int, default=8)
    a.set_defaults(func=_cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:  # e.g. a malformed FE_WORKERS
        print(f"fe: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
