"""Command-line entry point.

Subcommands: train-backbone, build-domains, train-discriminator,
train-experts, translate, evaluate, route-stats, gen-corpus, sweep.
Exit code 0 on success; on failure a machine-readable error JSON goes to
stderr and the exit code is nonzero.
"""

import argparse
import json
import logging
import sys

from . import pipeline
from .config import RunConfig, load_config


def build_parser():
    parser = argparse.ArgumentParser(
        prog="domainmoe",
        description="Label-free multi-domain translation pipeline")
    parser.add_argument("--config", help="run config (.json or INI-style key=value)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out-dir", help="override the run directory")
    parser.add_argument("--checked", action="store_true",
                        help="64-bit verification mode with NaN/Inf detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train-backbone", "build-domains", "train-discriminator",
                 "train-experts", "evaluate", "route-stats", "gen-corpus", "sweep"):
        sub.add_parser(name)
    tr = sub.add_parser("translate")
    tr.add_argument("--input", help="source text file (default: stdin)")
    tr.add_argument("--output", help="write translations here (default: stdout)")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if args.checked:
        cfg.checked = True
    return cfg


_COMMANDS = {
    "train-backbone": pipeline.cmd_train_backbone,
    "build-domains": pipeline.cmd_build_domains,
    "train-discriminator": pipeline.cmd_train_discriminator,
    "train-experts": pipeline.cmd_train_experts,
    "evaluate": pipeline.cmd_evaluate,
    "route-stats": pipeline.cmd_route_stats,
    "gen-corpus": pipeline.cmd_gen_corpus,
    "sweep": pipeline.cmd_sweep,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "translate":
            if args.input:
                with open(args.input, encoding="utf-8") as f:
                    lines = [l for l in f.read().splitlines() if l.strip()]
            else:
                lines = [l for l in sys.stdin.read().splitlines() if l.strip()]
            outputs = pipeline.cmd_translate(cfg, lines)
            text = "\n".join(outputs) + "\n"
            if args.output:
                with open(args.output, "w", encoding="utf-8") as f:
                    f.write(text)
            else:
                sys.stdout.write(text)
        else:
            result = _COMMANDS[args.command](cfg)
            json.dump(result, sys.stdout, indent=2, sort_keys=True, default=str)
            sys.stdout.write("\n")
        return 0
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        json.dump({"error": type(exc).__name__, "message": str(exc),
                   "command": args.command}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
