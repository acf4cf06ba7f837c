"""Command-line entry point.

Each subcommand reads the shared config file (or the built-in defaults),
applies flag overrides, runs its pipeline, and exits 0 on full success,
2 when some grid cells failed (the run still completes and the manifest
enumerates them), or 1 on configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import DEFAULT_CONFIG, ExperimentConfig, load_config
from .errors import ConfigurationError
from . import reports

_SUBCOMMANDS = ("simulate", "fit", "impulse", "estimate", "crlb", "table2", "table4", "fig4")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcchannel",
        description="Diffusive molecular-communication channel experiments.",
    )
    parser.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--d", type=float, help="distance override [um]")
        p.add_argument("--R", type=float, help="receiver radius override [um]")
        p.add_argument("--D", type=float, help="diffusion coefficient override [um^2/s]")
        p.add_argument("--M", type=int, help="sample count override")
    return parser


def _replace(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return dataclasses.replace(config, **kw)


def apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        config = _replace(config, master_seed=args.seed)
    if args.out is not None:
        config = _replace(config, output_dir=args.out)

    sub = args.subcommand
    if args.D is not None:
        if sub == "table4":
            config = _replace(config, table4=dataclasses.replace(config.table4, D_values=(args.D,)))
        elif sub in ("estimate", "crlb", "fig4"):
            config = _replace(config, estimation=dataclasses.replace(config.estimation, D_true=args.D))
        else:
            config = _replace(config, geometry=dataclasses.replace(config.geometry, D=args.D))
    if args.d is not None:
        if sub in ("table2", "table4"):
            config = _replace(config, geometry=dataclasses.replace(config.geometry, d_values=(args.d,)))
        elif sub == "impulse":
            config = _replace(config, impulse=dataclasses.replace(config.impulse, d=args.d))
        elif sub in ("estimate", "crlb", "fig4"):
            config = _replace(config, estimation=dataclasses.replace(config.estimation, d_true=args.d))
    if args.R is not None:
        if sub in ("table2",):
            config = _replace(config, geometry=dataclasses.replace(config.geometry, R_values=(args.R,)))
        elif sub == "table4":
            config = _replace(config, table4=dataclasses.replace(config.table4, R=args.R))
        elif sub == "impulse":
            config = _replace(config, impulse=dataclasses.replace(config.impulse, R=args.R))
        elif sub in ("estimate", "crlb", "fig4"):
            config = _replace(config, estimation=dataclasses.replace(config.estimation, R=args.R))
    if args.M is not None:
        config = _replace(config, estimation=dataclasses.replace(config.estimation, M_values=(args.M,)))
    return config


_RUNNERS = {
    "simulate": lambda cfg, args: reports.run_simulate_artifact(cfg, d=args.d, R=args.R),
    "fit": lambda cfg, args: reports.run_fit_artifact(cfg, d=args.d, R=args.R),
    "impulse": lambda cfg, args: reports.run_impulse_compare(cfg),
    "estimate": lambda cfg, args: reports.run_estimate_report(cfg),
    "crlb": lambda cfg, args: reports.run_crlb_report(cfg),
    "table2": lambda cfg, args: reports.run_table2(cfg),
    "table4": lambda cfg, args: reports.run_table4(cfg),
    "fig4": lambda cfg, args: reports.run_fig4(cfg),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else DEFAULT_CONFIG
        config = apply_overrides(config, args)
        result = _RUNNERS[args.subcommand](config, args)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    failures = result.get("failures", [])
    for f in failures:
        print(f"cell failed: {f}", file=sys.stderr)
    for a in result.get("artifacts", []):
        print(a)
    return 2 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
