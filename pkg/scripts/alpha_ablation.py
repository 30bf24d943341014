"""Focusing strength: sweep alpha at fixed lambda, one shared base pair.

Each row carries accuracy, per-attack advantage and the final train/test
loss gap, so it doubles as a loss-gap-vs-alpha series.
"""

from _common import base_pair, evaluate_point, parser, resolve, show, write
from past.config import parse_grid


def main():
    ap = parser(__doc__, preset="leaky")
    ap.add_argument("--alpha", type=lambda s: parse_grid(s, "--alpha"), default=(0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0))
    ap.add_argument("--lambda", dest="lam", type=float, default=None)
    args = ap.parse_args()
    cfg = resolve(args, "leaky")
    lam = args.lam if args.lam is not None else cfg.defense.lam[0]
    split, spec, models, _ = base_pair(cfg)
    rows = [evaluate_point(cfg, {"defense": "none"}, models, spec, split)[0]]
    for a in args.alpha:
        rows.append(evaluate_point(cfg, {"defense": "past", "lambda": lam, "alpha": a}, models, spec, split)[0])
    show(rows, ["defense", "alpha", "test_acc", "adv_loss", "max_adv", "loss_gap"])
    write(args.out, rows)


if __name__ == "__main__":
    main()
