"""Shared plumbing for the experiment scripts."""

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from past import experiment as ex  # noqa: E402
from past.config import load_config  # noqa: E402
from past.presets import PRESETS  # noqa: E402


def parser(doc, preset="overfit"):
    ap = argparse.ArgumentParser(description=doc)
    ap.add_argument("--config", type=Path, help=f"INI config (default: {preset} preset)")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", type=Path, required=True, help="CSV file to write")
    return ap


def resolve(args, preset="overfit"):
    cfg = load_config(args.config) if args.config else PRESETS[preset]
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def base_pair(cfg):
    split, spec = ex.prepare(cfg)
    base = ex.train_base(cfg, split, spec)
    return split, spec, {s: base[s][0] for s in ex.SIDES}, {s: base[s][1] for s in ex.SIDES}


def evaluate_point(cfg, point, models, spec, split):
    """Tune both sides with one defense point, attack, return a flat row."""
    tuned, _ = ex.tune_pair(cfg, point, models, spec, split)
    summary, _, extras = ex.evaluate_pair(cfg, spec, split, tuned["target"][0], tuned["shadow"][0],
                                          tuned["target"][1])
    return ex.sweep_row(point, summary, extras), tuned


def write(path, rows, fields=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = fields or list(rows[0])
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {path}")


def show(rows, keys):
    print("  ".join(f"{k:>10}" for k in keys))
    for r in rows:
        print("  ".join(f"{r.get(k, ''):>10.4f}" if isinstance(r.get(k), float) else f"{str(r.get(k, '')):>10}"
                        for k in keys))
