"""Command-line front end.

Subcommands mirror the pipeline stages::

    sescale synth    --config cfg.json --out run/
    sescale pipeline --config cfg.json --out run/
    sescale ingest | filter | fit | project | score | validate ...

Flag values override the config file, which overrides built-in defaults.
Failures exit nonzero after writing a machine-readable ``error.json``
into the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date

from .config import PipelineConfig
from .errors import ConfigError, InvalidParameter, SescaleError
from .pipeline import PIPELINE_STAGES, run_stages

_SUBCOMMANDS = ("ingest", "filter", "fit", "project", "score",
                "validate", "synth", "pipeline")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sescale",
        description="Latent socioeconomic scale estimation from follow graphs.",
    )
    parser.add_argument("command", choices=_SUBCOMMANDS)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--threads", type=int, help="intra-stage parallelism hint")
    parser.add_argument("--brands", help="brand catalog CSV")
    parser.add_argument("--edges", help="follow edges CSV")
    parser.add_argument("--users", help="user profiles CSV")
    parser.add_argument("--k-dims", type=int, dest="k_dims",
                        help="number of retained dimensions")
    parser.add_argument("--delimiter", help="CSV delimiter (default comma)")
    crit = parser.add_argument_group("filter criteria overrides")
    crit.add_argument("--min-brands-per-user", type=int)
    crit.add_argument("--min-statuses", type=int)
    crit.add_argument("--min-followers", type=int)
    crit.add_argument("--active-since", help="ISO date, e.g. 2020-01-01")
    crit.add_argument("--restrict-country",
                      help="country code, or 'none' to disable")
    crit.add_argument("--min-brand-followers", type=int,
                      dest="min_post_filter_brand_followers",
                      help="post-filter brand follower floor")
    crit.add_argument("--min-informative-followers", type=int)
    parser.add_argument("--single-pass", action="store_true", default=None,
                        dest="single_pass",
                        help="one prune/re-select round instead of a fixed point")
    parser.add_argument("--analysis", action="append",
                        help="validation analysis to run (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    for name in ("out", "seed", "threads", "brands", "edges", "users",
                 "k_dims", "delimiter"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    if args.seed is not None:
        # The svd stream follows the master seed unless set explicitly.
        cfg.svd.seed = args.seed
    for name in ("min_brands_per_user", "min_statuses", "min_followers",
                 "min_post_filter_brand_followers",
                 "min_informative_followers"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg.criteria, name, value)
    if args.active_since is not None:
        try:
            cfg.criteria.active_since = date.fromisoformat(args.active_since)
        except ValueError as err:
            raise ConfigError(f"--active-since: {err}") from err
    if args.restrict_country is not None:
        cfg.criteria.restrict_country = (
            None if args.restrict_country.lower() == "none"
            else args.restrict_country)
    cfg.criteria.validate()
    if args.single_pass is not None:
        cfg.single_pass_prune = args.single_pass
    if args.analysis:
        cfg.validate["analyses"] = args.analysis
    cfg.check()
    return cfg


def _emit_error(cfg, exc: Exception, stage: str):
    payload = {"error": type(exc).__name__, "message": str(exc), "stage": stage}
    print(json.dumps(payload), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = (PipelineConfig.from_file(args.config) if args.config
               else PipelineConfig())
        cfg = _apply_overrides(cfg, args)
    except (ConfigError, InvalidParameter) as err:
        _emit_error(None, err, "config")
        return 2

    if args.command == "pipeline":
        stages = list(PIPELINE_STAGES)
        if not cfg.validate.get("analyses"):
            stages.remove("validate")
    else:
        stages = [args.command]

    try:
        run_stages(cfg, stages)
    except (ConfigError, InvalidParameter) as err:
        _emit_error(cfg, err, getattr(err, "stage", stages[0]))
        return 2
    except SescaleError as err:
        _emit_error(cfg, err, getattr(err, "stage", stages[0]))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
