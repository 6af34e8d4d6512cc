"""Command-line entry point: ``tallyopt <command> [options]``."""

import argparse
import logging
import sys

import yaml

from .config import load_config
from .errors import TallyoptError
from .pipeline import RUN_ALL_ORDER, Study

COMMANDS = ("gen-data", "tune", "train", "optimize", "verify", "repeat", "cost-summary", "report", "run-all")


def _parse_overrides(extra):
    """``--a.b VALUE`` / ``--a.b=VALUE`` pairs; values are parsed as YAML scalars."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise SystemExit(f"tallyopt: unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise SystemExit(f"tallyopt: {tok} needs a value")
            raw = extra[i + 1]
            i += 2
        out[key.replace("-", "_")] = yaml.safe_load(raw)
    return out


def build_parser():
    p = argparse.ArgumentParser(
        prog="tallyopt",
        description="Surrogate-based design optimization study under Monte Carlo tally noise.",
        epilog="Any config field can also be set with --<dotted.name> VALUE, e.g. --nsga.generations 50.",
    )
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH", help="YAML study configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--fast-grid", action="store_true", help="use the reduced 8-config tuning grid")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--problem", choices=("moderator", "converter"))
    p.add_argument("--resume", action="store_true", help="run-all: skip stages whose artifacts are current")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args, extra = build_parser().parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in ("seed", "repeats", "jobs", "out", "problem")
                 if getattr(args, k) is not None}
    if args.fast_grid:
        overrides["tuning.grid"] = "reduced"
    overrides.update(_parse_overrides(extra))
    try:
        study = Study(load_config(args.config, overrides))
        if args.command == "run-all":
            study.run_all(resume=args.resume)
        else:
            assert args.command in RUN_ALL_ORDER
            study.run_stage(args.command)
    except TallyoptError as exc:
        print(f"tallyopt: error: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command}: done ({study.out})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
