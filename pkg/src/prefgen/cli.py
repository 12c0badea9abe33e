"""``prefgen`` command line entry point."""
from __future__ import annotations

import argparse
import logging
import sys

from .exceptions import ConfigError, DependencyError
from .pipeline import STAGES, Pipeline

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_RUNTIME = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefgen", description="Preference-guided design generation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in STAGES + ("run-all",):
        cmd = sub.add_parser(name, help="run every stage of the configured mode" if name == "run-all"
                             else f"run the {name} stage")
        cmd.add_argument("--config", metavar="PATH", help="INI config file (defaults apply when omitted)")
        cmd.add_argument("--out", metavar="DIR", help="output root (default: $PREFGEN_OUT or ./prefgen-out)")
        cmd.add_argument("--seed", type=int, metavar="N", help="master seed (overrides [run] seed)")
        cmd.add_argument("--force", action="store_true", help="rerun even when the stage is up to date")
        cmd.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        pipeline = Pipeline.from_files(args.config, args.out, args.seed)
        if args.command == "run-all":
            pipeline.run_all(force=args.force)
        else:
            pipeline.run_stage(args.command, force=args.force)
    except ConfigError as exc:
        print(f"prefgen: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as exc:
        print(f"prefgen: dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        logging.getLogger("prefgen").debug("traceback", exc_info=True)
        print(f"prefgen: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
