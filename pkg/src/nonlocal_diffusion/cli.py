"""Command line entry point.

Exit codes: 0 success, 1 property failure, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import workflows
from .config import PRESETS, RunConfig, load_preset
from .errors import ConfigError, NumericalError, PropertyViolation, StencilError
from .io import write_manifest
from .verify import run_verify

COMMANDS = {
    "grid": workflows.run_grid,
    "solve": workflows.run_solve,
    "evolve": workflows.run_evolve,
    "lyapunov": workflows.run_lyapunov,
    "invariant": workflows.run_invariant,
    "simulate": workflows.run_simulate,
    "verify": run_verify,
    "compare": workflows.run_compare,
}

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonlocal-diffusion", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="YAML run configuration")
    src.add_argument("--preset", choices=PRESETS, help="shipped configuration")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--jobs", type=int, default=None, help="Monte Carlo worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _configure(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else load_preset(args.preset)
    d = cfg.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if args.jobs is not None:
        d["numerics"]["jobs"] = args.jobs
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = _configure(args)
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.yaml").write_text(cfg.to_yaml())
    ctx = workflows.Context.from_config(cfg)
    try:
        report = COMMANDS[args.command](ctx, args.out)
        code = EXIT_OK if report.get("passed", True) else EXIT_PROPERTY
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except PropertyViolation as exc:
        print(f"property violation in {args.command}: {exc}", file=sys.stderr)
        code = EXIT_PROPERTY
    except (NumericalError, StencilError) as exc:
        diag = getattr(exc, "diagnostics", {})
        print(f"numerical failure in {args.command}: {exc} {diag or ''}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    write_manifest(args.out, args.command, cfg.config_hash(), cfg.seed, code)
    print(f"{args.command}: exit {code}, outputs in {args.out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
