"""Utility-privacy curve: for each lambda, sweep alpha; one row per point."""

from _common import base_pair, evaluate_point, parser, resolve, show, write
from past.config import parse_grid


def main():
    ap = parser(__doc__, preset="leaky")
    ap.add_argument("--lambda", dest="lam", type=lambda s: parse_grid(s, "--lambda"), default=(0.003, 0.01, 0.03, 0.1))
    ap.add_argument("--alpha", type=lambda s: parse_grid(s, "--alpha"), default=(0.5, 1.5, 2.5))
    args = ap.parse_args()
    cfg = resolve(args, "leaky")
    split, spec, models, _ = base_pair(cfg)
    rows = [evaluate_point(cfg, {"defense": "none"}, models, spec, split)[0]]
    for lam in args.lam:
        for a in args.alpha:
            rows.append(evaluate_point(cfg, {"defense": "past", "lambda": lam, "alpha": a}, models, spec, split)[0])
    show(rows, ["lambda", "alpha", "test_acc", "adv_loss", "max_adv", "p1"])
    write(args.out, rows)


if __name__ == "__main__":
    main()
