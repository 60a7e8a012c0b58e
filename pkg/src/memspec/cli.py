"""Command-line entry point: ``memspec run|preset|validate|list``."""

from __future__ import annotations

import argparse
import json
import sys

from . import config
from .config import ConfigError

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memspec", description="Memory-assisted correlation spectroscopy runs.")
    sub = ap.add_subparsers(dest="verb", required=True)

    def add_run_opts(p):
        p.add_argument("--override", "-o", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config key override, value parsed as YAML")
        p.add_argument("--out", help="output directory (default: config output_dir)")
        p.add_argument("--workers", type=int, help=f"worker processes (default: ${config.WORKERS_ENV} or 1)")

    p = sub.add_parser("run", help="run a scenario from a YAML config")
    p.add_argument("config")
    add_run_opts(p)
    p = sub.add_parser("preset", help="run a named preset")
    p.add_argument("name")
    add_run_opts(p)
    p = sub.add_parser("validate", help="check a config (or preset name) and echo derived values")
    p.add_argument("config")
    p.add_argument("--override", "-o", action="append", default=[], metavar="KEY=VALUE")
    sub.add_parser("list", help="list presets")
    return ap


def _load(target: str, overrides: list):
    if target in config.PRESETS:
        return config.preset(target, overrides)
    return config.load(target, overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.verb == "list":
        for name in config.list_presets():
            print(name)
        return EXIT_OK
    try:
        if args.verb == "validate":
            cfg = _load(args.config, args.override)
            print(json.dumps({"status": "ok", **config.validate(cfg)}, indent=2))
            return EXIT_OK
        cfg = config.load(args.config, args.override) if args.verb == "run" else config.preset(args.name, args.override)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers: must be >= 1")
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    from .runner import run_scenario
    try:
        out = run_scenario(cfg, args.out, args.workers)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any simulation failure maps to one exit code
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
