"""Command-line entry point: ``voronoi-wta {generate,train,eval,sweep-h,theory,sample}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import tomli

from . import experiment as ex


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key.strip()] = tomli.loads(f"v = {value}")["v"]
        except tomli.TOMLDecodeError:
            out[key.strip()] = value
    return out


def load_config(args) -> ex.RunConfig:
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.out is not None:
        overrides["out"] = args.out
    if args.config:
        return ex.RunConfig.from_toml(args.config, overrides)
    return ex.RunConfig.from_dict(overrides)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, help="run a single seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value (TOML literal), repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="voronoi-wta", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write dataset splits as CSV")
    sub.add_parser("train", parents=[common], help="train one model per seed")
    sub.add_parser("eval", parents=[common], help="evaluate checkpoints, one row per (seed, h)")
    p = sub.add_parser("sweep-h", parents=[common], help="NLL versus h for Kernel-/Voronoi-WTA")
    p.add_argument("--h-grid", type=float, nargs="+")
    sub.add_parser("theory", parents=[common], help="asymptotic quantization risks over K")
    p = sub.add_parser("sample", parents=[common], help="draw estimator samples")
    p.add_argument("--x", type=float, nargs="+", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "generate":
            for path in ex.cmd_generate(cfg):
                print(path)
        elif args.command == "train":
            for path in ex.cmd_train(cfg):
                print(path)
        elif args.command == "eval":
            for report in ex.cmd_eval(cfg):
                print(report.to_json())
        elif args.command == "sweep-h":
            result = ex.cmd_sweep_h(cfg, args.h_grid)
            for row in result["rows"]:
                print(json.dumps(row))
            print(json.dumps({"tuned": result["tuned"]}))
        elif args.command == "theory":
            for row in ex.cmd_theory(cfg):
                print(json.dumps(row))
        elif args.command == "sample":
            print(ex.cmd_sample(cfg, args.x, args.n, path=args.path))
    except (ValueError, FileNotFoundError, ex.NoDensityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
