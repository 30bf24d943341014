"""Uniform vs sensitivity-weighted penalties, for both l1 and l2, at matched lambda."""

from _common import base_pair, evaluate_point, ex, parser, resolve, show, write
from past.config import parse_grid
from past.tuning import PastConfig, past_tune


def adaptive_l2(cfg, lam, alpha, models, spec, split):
    # same loop as PAST, the weighted penalty enters the gradient as 2 * lam * gamma^alpha * theta
    pc = PastConfig(lam=lam, alpha=alpha, tuning_epochs=cfg.tuning_epochs, norm_order=2,
                    gap_batch_limit=cfg.defense.gap_batch_limit)
    tuned = {s: past_tune(models[s], spec, split, pc, cfg.tuning_optim(),
                          seed=ex.derive_seed(cfg.seed, f"tune/{s}"), side=s) for s in ex.SIDES}
    summary, _, extras = ex.evaluate_pair(cfg, spec, split, tuned["target"][0], tuned["shadow"][0])
    return ex.sweep_row({"defense": "past_l2", "lambda": lam, "alpha": alpha}, summary, extras)


def main():
    ap = parser(__doc__, preset="leaky")
    ap.add_argument("--lambda", dest="lam", type=lambda s: parse_grid(s, "--lambda"), default=(0.01, 0.03))
    args = ap.parse_args()
    cfg = resolve(args, "leaky")
    alpha = cfg.defense.alpha[-1]
    split, spec, models, _ = base_pair(cfg)
    rows = [evaluate_point(cfg, {"defense": "none"}, models, spec, split)[0]]
    for lam in args.lam:
        rows.append(evaluate_point(cfg, {"defense": "l1", "lambda": lam}, models, spec, split)[0])
        rows.append(evaluate_point(cfg, {"defense": "past", "lambda": lam, "alpha": alpha}, models, spec, split)[0])
        rows.append(evaluate_point(cfg, {"defense": "l2", "lambda": lam}, models, spec, split)[0])
        rows.append(adaptive_l2(cfg, lam, alpha, models, spec, split))
    show(rows, ["defense", "lambda", "test_acc", "adv_loss", "max_adv", "near_zero_fraction"])
    write(args.out, rows)


if __name__ == "__main__":
    main()
