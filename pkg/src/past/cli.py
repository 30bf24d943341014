"""`past` command line: train, tune, attack, sweep, report.

Failures exit nonzero and print one JSON line to stderr:
``{"error": <kind>, "field": <config path or null>, "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment
from .config import DEFENSES, ConfigError, ExperimentConfig, load_config, parse_grid


def _grid(flag):
    def conv(text):
        try:
            return parse_grid(text, flag)
        except ConfigError as exc:
            raise argparse.ArgumentTypeError(exc.message) from None
    return conv


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="past")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, snapshot=False, defense=False):
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path)
        if snapshot:
            p.add_argument("--snapshot", type=Path, required=True, help="run directory holding target/shadow snapshots")
        if defense:
            p.add_argument("--defense", choices=DEFENSES)
            p.add_argument("--alpha", type=_grid("--alpha"))
            p.add_argument("--lambda", dest="lam", type=_grid("--lambda"))

    common(sub.add_parser("train", help="train target and shadow base models"))
    common(sub.add_parser("tune", help="apply a defense to both models of a run"), snapshot=True, defense=True)
    common(sub.add_parser("attack", help="run the MIA battery against a run"), snapshot=True)
    common(sub.add_parser("sweep", help="one base pair, one tune+attack per grid point"), defense=True)
    rep = sub.add_parser("report", help="emit CSV plot series for run directories")
    rep.add_argument("--snapshot", type=Path, action="append", required=True, help="run directory (repeatable)")
    rep.add_argument("--out", type=Path, required=True)
    return ap


def _resolve(args) -> ExperimentConfig:
    path = args.config
    if path is None and getattr(args, "snapshot", None) is not None:
        path = args.snapshot / "config.ini"
    cfg = load_config(path) if path is not None else ExperimentConfig()
    return experiment.override(
        cfg,
        seed=args.seed,
        defense=getattr(args, "defense", None),
        alpha=getattr(args, "alpha", None),
        lam=getattr(args, "lam", None),
        out=args.out,
    )


def run(args) -> dict:
    if args.command == "report":
        files = experiment.cmd_report(args.snapshot, args.out)
        return {"files": [str(f) for f in files]}
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed", "must be a non-negative integer")
    cfg = _resolve(args)
    out = Path(cfg.out_dir)
    if args.command == "train":
        m = experiment.cmd_train(cfg, out)
    elif args.command == "tune":
        m = experiment.cmd_tune(cfg, args.snapshot, out)
    elif args.command == "attack":
        m = experiment.cmd_attack(cfg, args.snapshot, out)
    else:
        m = experiment.cmd_sweep(cfg, out)
    return {"out": str(out), "stage": m["stage"]}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "field": exc.field, "message": exc.message}), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(json.dumps({"error": "missing", "field": None, "message": str(exc)}), file=sys.stderr)
        return 3
    except FloatingPointError as exc:
        print(json.dumps({"error": "non_finite", "field": None, "message": str(exc)}), file=sys.stderr)
        return 4
    except (ValueError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "field": None, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
