"""Command-line entry point: one subcommand per stage plus ``run-all``.

Exit status: 0 success, 1 validation / configuration failure, 2 backend
failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import Config
from .errors import BackendError, PromptMixError
from .pipeline import STAGE_FUNCS, Run, run_all

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BACKEND = 2
EXIT_USAGE = 64

COMMANDS = tuple(STAGE_FUNCS) + ("run-all",)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="pipeline config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field by dotted path (repeatable)")
    common.add_argument("--workers", type=int, metavar="N", help="worker pool width")
    common.add_argument("--out", default="out", metavar="DIR", help="artifact root (PROMPTMIX_OUT wins)")
    common.add_argument("--resume", action="store_true", help="keep checkpoints and finished stages")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="promptmix", description="Synthetic dataset boosting pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = os.environ.get("PROMPTMIX_OUT") or args.out
    try:
        cfg = Config.load(args.config, args.overrides)
        run = Run(cfg, out, workers=args.workers, resume=args.resume)
        if args.command == "run-all":
            reports = run_all(run)
        else:
            reports = [STAGE_FUNCS[args.command](run)]
    except BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except PromptMixError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        print("interrupted; checkpoints are on disk, rerun with --resume", file=sys.stderr)
        return 130
    for report in reports:
        print(json.dumps({k: report[k] for k in ("stage", "counts", "duration_s")}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
