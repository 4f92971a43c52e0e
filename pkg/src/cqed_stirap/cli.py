"""Command-line entry point: one subcommand per experiment kind.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 failed
assertion (``bound-check``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .exceptions import ValidationError
from .io import FORMATS, KINDS, ExperimentConfig, load_config
from .presets import PRESETS, figure_preset

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_ASSERTION = 0, 1, 2, 3

log = logging.getLogger("cqed_stirap")


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("workers must be at least 1")
    return value


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors (exit 1), not argparse's default exit 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cqed-stirap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", metavar="PATH", help="JSON experiment config")
        src.add_argument("--preset", metavar="NAME", choices=sorted(PRESETS), help="figure preset")
        p.add_argument("--out", metavar="DIR", help="output directory (default: from config, else ./results)")
        p.add_argument("--format", choices=FORMATS, help="table format")
        p.add_argument("--seed", type=_u64, help="random seed")
        p.add_argument("--workers", type=_positive, help="parallel worker cap")
    sub.add_parser("presets", help="list figure presets and their kinds")
    return parser


def resolve_config(args) -> ExperimentConfig:
    """Config from ``--config`` or ``--preset`` with command-line overrides applied."""
    config = load_config(args.config) if args.config else figure_preset(args.preset)
    if config.kind != args.kind:
        raise ValidationError(f"subcommand {args.kind!r} does not match the config kind {config.kind!r}")
    over = {k: v for k, v in dict(out_dir=args.out, format=args.format, seed=args.seed,
                                  workers=args.workers).items() if v is not None}
    if args.preset and args.out is None:
        over["out_dir"] = f"results/{args.preset}"
    return replace(config, **over)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    if args.kind == "presets":
        for name in sorted(PRESETS):
            print(f"{name}\t{figure_preset(name).kind}")
        return EXIT_OK
    # runner pulls in the numerical modules; import late so parse errors stay fast
    from .runner import run
    try:
        config = resolve_config(args)
        config.check()
    except ValidationError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_VALIDATION
    try:
        result = run(config)
    except ValidationError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001  any runtime failure maps to one exit code
        log.error("run failed: %s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    for line in result.summary.get("lines", []):
        print(line)
    print(json.dumps({"out_dir": config.out_dir, "outputs": sorted(result.manifest.outputs),
                      "wall_time": round(result.manifest.wall_time, 3)}))
    if result.passed is False:
        return EXIT_ASSERTION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
