"""``switchflow <subcommand> --config FILE [--seed N] [--out DIR] [--workers N]``."""

from __future__ import annotations

import argparse
import sys

from .runner import COMMANDS, ConfigError, config_with_overrides, load_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="switchflow", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="TOML experiment file")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--workers", type=int, default=None, help="worker threads")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_with_overrides(load_config(args.config), args.seed, args.out, args.workers)
    except (ConfigError, OSError) as exc:
        print(f"switchflow: {exc}", file=sys.stderr)
        return 2
    manifest = run_experiment(cfg, args.command)
    for note in manifest.notes:
        print(note)
    print(f"{args.command}: {manifest.status}, {len(manifest.outputs)} file(s) in {cfg.out}")
    return 0 if manifest.status == "ok" else 1


if __name__ == "__main__":
    sys.exit(main())
