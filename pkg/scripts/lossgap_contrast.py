"""Regularizing the loss gap directly vs PAST: does the inference set leak?

``infer_gap`` compares the inference set (used during tuning) with held-out
data the tuning never touched.
"""

from dataclasses import replace

from _common import ex, parser, resolve, show, write
from past.config import parse_grid
from past.tuning import loss_gap


def main():
    ap = parser(__doc__)
    ap.add_argument("--mu", type=lambda s: parse_grid(s, "--mu"), default=None)
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    base_cfg = resolve(args)
    mus = args.mu or (base_cfg.defense.mu,)
    rows = []
    for seed in range(base_cfg.seed, base_cfg.seed + args.seeds):
        cfg = replace(base_cfg, seed=seed)
        split, spec = ex.prepare(cfg)
        base = ex.train_base(cfg, split, spec)["target"][0]
        pre = loss_gap(base, spec, split.target_train, split.target_test)
        points = [{"defense": "past", "lambda": cfg.defense.lam[0], "alpha": cfg.defense.alpha[0]}]
        points += [{"defense": "lossgap", "mu": m} for m in mus]
        for pt in points:
            _, tr = ex.apply_defense(cfg, pt, base, spec, split, "target")
            rows.append({"seed": seed, "defense": pt["defense"], "mu": pt.get("mu", ""),
                         "gap_before": pre, "gap_after": tr[-1].loss_gap, "infer_gap": tr[-1].infer_gap,
                         "test_acc": tr[-1].test_acc})
    show(rows, ["seed", "defense", "mu", "gap_before", "gap_after", "infer_gap"])
    write(args.out, rows)


if __name__ == "__main__":
    main()
