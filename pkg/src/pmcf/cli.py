"""Command-line entry point.

Every subcommand takes a config file; the subcommand name overrides the
config's scenario.  Exit codes: 0 success, 2 configuration error,
3 numeric error, 4 search error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, NumericError, PmcfError, SearchError
from .runner import load_config, run_experiment

_COMMANDS = ("profile", "energy", "spectrum", "relax", "minmax", "construct",
             "diagnose", "run")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pmcf",
        description="Phase-field toolkit: relaxation flows, mountain-pass "
        "saddle search, deformation paths, and interface diagnostics on "
        "flat tori.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(
            name,
            help=(
                "run the scenario from the config"
                if name == "run"
                else f"run the {name} scenario"
            ),
        )
        p.add_argument("config", help="path to the experiment config")
        p.add_argument("--output", help="override the output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command != "run":
            cfg.scenario = args.command
            cfg.validate()
        manifest = run_experiment(cfg, outdir=args.output)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except SearchError as exc:
        print(f"search error: {exc}", file=sys.stderr)
        return 4
    except PmcfError as exc:  # catch-all for the package's own failures
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"manifest: {manifest.path}")
    for key, value in sorted(manifest.constants.items()):
        print(f"  {key} = {value}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
