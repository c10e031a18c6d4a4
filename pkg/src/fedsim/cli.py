"""Command line entry point.

    fedsim run --config exp.yaml [--override k=v ...] [--seed N] [--output-dir DIR]
    fedsim run --preset NAME [...]
    fedsim list-presets
    fedsim validate --config exp.yaml

Exit codes: 0 success, 1 config or runtime failure, 2 usage error.
Seed precedence is --seed, then FEDSIM_SEED, then the file.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .config import apply_env, apply_overrides, load_config
from .errors import ConfigError
from .presets import preset, preset_names
from .runner import RunError, run_experiment


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedsim", description="Federated learning attack/defense simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path)
    src.add_argument("--preset")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    run.add_argument("--seed", type=int)
    run.add_argument("--output-dir", type=Path)

    sub.add_parser("list-presets", help="print the preset catalog")

    val = sub.add_parser("validate", help="check a config file without running it")
    val.add_argument("--config", type=Path, required=True)
    return p


def _load(args):
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = apply_env(preset(args.preset), os.environ)
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"common.seed={args.seed}")
    return apply_overrides(cfg, overrides) if overrides else cfg


def cli_main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "list-presets":
        for name in preset_names():
            print(name)
        return 0

    try:
        if args.command == "validate":
            load_config(args.config)
            print("OK")
            return 0
        cfg = _load(args)
        out = args.output_dir or (Path(cfg.output.dir) if cfg.output.dir else
                                  Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}-{cfg.name}")
        records = run_experiment(cfg, out)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    last = records[-1]
    print(f"{cfg.name}: {len(records)} rounds, final accuracy {last.test_accuracy:.4f}, outputs in {out}")
    return 0


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
