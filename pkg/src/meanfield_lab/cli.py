"""Command-line entry point: converge-sweep, verify-identities, bound-table, simulate."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict

from . import experiments as ex
from .bounds import BOUND_COLUMNS
from .errors import BoundViolation, InstanceTooLarge, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_VIOLATION = 3
EXIT_RESOURCE = 4

log = logging.getLogger("meanfield_lab")


def _emit(text: str, out_dir: str | None, name: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
        return
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    log.info("wrote %s", path)


def _render(rows, columns, fmt: str) -> str:
    return ex.to_csv(rows, columns) if fmt == "csv" else ex.to_json(rows)


def cmd_converge_sweep(cfg, args) -> int:
    try:
        records = ex.run_converge_sweep(cfg, workers=args.workers)
    except BoundViolation as exc:
        log.error("%s", exc)
        _emit(ex.to_json({"error": str(exc), "record": asdict(exc.record), "instance": exc.instance}),
              args.out, "bound_violation.json")
        return EXIT_VIOLATION
    _emit(_render(records, ex.SWEEP_COLUMNS, args.format), args.out, f"sweep.{args.format}")
    return EXIT_OK


def cmd_verify_identities(cfg, args) -> int:
    report = ex.run_verify_identities(cfg, quick=args.quick)
    ex.validate_report(report)
    for item in report["identities"]:
        log.info("%s", ex.IdentityResult(**item).line())
    if args.format == "csv":
        text = ex.to_csv(report["identities"], ("name", "passed", "residual", "tolerance", "detail"))
    else:
        text = ex.to_json(report)
    _emit(text, args.out, f"identities.{args.format}")
    if report["error"] is not None:
        return EXIT_VALIDATION
    return EXIT_OK if report["passed"] else EXIT_VIOLATION


def cmd_bound_table(cfg, args) -> int:
    rows = ex.run_bound_table(cfg)
    _emit(_render(rows, BOUND_COLUMNS, args.format), args.out, f"bounds.{args.format}")
    return EXIT_OK


def cmd_simulate(cfg, args) -> int:
    rows = ex.simulate(cfg)
    _emit(_render(rows, ex.SIMULATE_COLUMNS, args.format), args.out, f"simulate.{args.format}")
    return EXIT_OK


COMMANDS = {
    "converge-sweep": cmd_converge_sweep,
    "verify-identities": cmd_verify_identities,
    "bound-table": cmd_bound_table,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meanfield-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="TOML model configuration")
        p.add_argument("--out", default=None, help="output directory (default: stdout)")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--format", choices=("csv", "json"), default="csv" if name != "verify-identities" else "json")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "verify-identities":
            p.add_argument("--quick", action="store_true", help="fewer random trials per suite")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.workers < 1:
        log.error("--workers must be positive")
        return EXIT_VALIDATION
    try:
        cfg = ex.ModelConfig.load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        return COMMANDS[args.command](cfg, args)
    except (ValidationError, FileNotFoundError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_VALIDATION
    except InstanceTooLarge as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
