"""Command line entry point: `kgslab run --config <path>` and `kgslab list-experiments`."""

from __future__ import annotations

import argparse
import logging
import sys

from .cli_runner import EXPERIMENTS, ConfigError, load_config, run

log = logging.getLogger("kgslab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgslab", description="Radial Klein-Gordon-Schrodinger laboratory")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("--config", required=True, help="flat YAML config")
    p_run.add_argument("--out", default=None, help="output directory (overrides the config's `out`)")
    p_run.add_argument("--threads", type=int, default=1, help="worker threads for sweep cells")
    sub.add_parser("list-experiments", help="print the experiment names")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "list-experiments":
        for name, text in EXPERIMENTS.items():
            print(f"{name:18s} {text}")
        return 0
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    log.info("running %s", cfg.experiment)
    outcome = run(cfg, args.out, args.threads)
    verdict = "PASS" if outcome.status == 0 else "FAIL"
    print(f"{cfg.experiment}: {verdict} ({len(outcome.result.rows)} rows) -> {outcome.out_dir}")
    return outcome.status


if __name__ == "__main__":
    sys.exit(main())
