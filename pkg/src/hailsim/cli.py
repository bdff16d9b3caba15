"""Command-line entry point: ``hailsim <verb> [--config FILE] [--seed N] [--runs N] [--out DIR] ...``.

Every :class:`~hailsim.io.ExperimentConfig` field is also a flag
(``t_max_pu`` becomes ``--t-max-pu``); flag values are parsed as JSON when
possible, so ``--t-max-pu '[4, 8, 16]'`` and ``--synth '{"preset": "hotspot"}'``
work. Flags override the config file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

from .experiments import EXIT_CONFIG, run_experiment
from .io import ConfigError, ExperimentConfig

VERBS = {
    "calibrate": "calibrate",
    "tensor": "tensor",
    "baseline": "baseline",
    "simulate": "comparison",
    "sweep": "sweep",
    "geofence": "geofence",
    "demand": "demand",
    "synth": "synth",
}
_PATHS = ("nodes", "edges", "trips", "gps", "fleet", "edge_times", "tensor")


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hailsim", description="Ride-hailing dispatch simulation experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        sp = sub.add_parser(verb)
        sp.add_argument("--config", help="JSON experiment config")
        for f in fields(ExperimentConfig):
            flag = "--" + f.name.replace("_", "-")
            if f.name == "record_events":
                sp.add_argument("--events", dest="record_events", action="store_const", const=True, default=None,
                                help="write per-run event logs")
            elif f.name in _PATHS or f.name == "out":
                sp.add_argument(flag, dest=f.name, default=None)
            else:
                sp.add_argument(flag, dest=f.name, type=_value, default=None)
    return p


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    data = cfg.to_dict()
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = v
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = config_from_args(args)
    except (ConfigError, TypeError) as e:
        print(f"hailsim: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    status = run_experiment(cfg, VERBS[args.verb])
    if status:
        print(f"hailsim: {args.verb} failed with exit status {status} (see log above)", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
