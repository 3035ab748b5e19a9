"""Command line entry point: ``tabcl run | grid | report``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import yaml

from .config import OUTPUT_ROOT_ENV, ConfigError, load_config, parse_override
from .harness import (
    RunAborted,
    comparison_rows,
    emit_results,
    expand_grid,
    format_table,
    report,
    run_experiment,
    run_grid,
    write_table,
)


def _output_root(arg: str | None, cfg_dir: str) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ROOT_ENV) or cfg_dir)


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    root = _output_root(args.out, cfg.output_dir)
    out = root / cfg.label
    try:
        log = run_experiment(cfg, resume=args.resume, run_dir=out)
    except RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 1
    emit_results(log, out)
    print(format_table(comparison_rows([(cfg.label, log)])))
    print(f"results written to {out}")
    return 0


def _parse_axis(text: str) -> tuple[str, list]:
    key, raw = parse_override(text)
    if isinstance(raw, str):
        values = [yaml.safe_load(v) for v in raw.split(",")]
    elif isinstance(raw, list):
        values = raw
    else:
        values = [raw]
    return key, values


def cmd_grid(args) -> int:
    base = load_config(args.config, args.set)
    axes = dict(_parse_axis(v) for v in args.vary)
    configs = expand_grid(base, axes) if axes else [base]
    root = _output_root(args.out, base.output_dir)
    logs = run_grid(configs, root, workers=args.workers)
    names = [f"{i:03d}_{c.label}" for i, c in enumerate(configs)]
    print(format_table(comparison_rows(list(zip(names, logs)))))
    print(f"comparison table: {root / 'comparison.csv'}")
    return 0 if all(lg.error is None for lg in logs) else 1


def cmd_report(args) -> int:
    rows = report(args.root)
    if not rows:
        print(f"no run summaries found under {args.root}", file=sys.stderr)
        return 1
    print(format_table(rows))
    if args.out:
        write_table(rows, args.out)
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tabcl", description="Continual learning on tabular streams.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a single config")
    r.add_argument("config", nargs="?", help="YAML config file")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted-path override")
    r.add_argument("--out", help=f"output root (default: ${OUTPUT_ROOT_ENV} or config output_dir)")
    r.add_argument("--resume", help="snapshot file to resume from")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("grid", help="run the product of override axes over a config")
    g.add_argument("config", nargs="?", help="YAML config file")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    g.add_argument("--vary", action="append", default=[], metavar="KEY=V1,V2",
                   help="grid axis, e.g. normalizer.name=global,local,cn,clean")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--out", help="output root")
    g.set_defaults(func=cmd_grid)

    rep = sub.add_parser("report", help="aggregate run summaries into a comparison table")
    rep.add_argument("root", help="directory holding run subdirectories")
    rep.add_argument("--out", help="write the table as CSV")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
