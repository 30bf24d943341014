"""Effect of the tuning budget: PAST for several epoch counts from one base pair."""

from dataclasses import replace

from _common import base_pair, evaluate_point, parser, resolve, show, write


def main():
    ap = parser(__doc__, preset="leaky")
    ap.add_argument("--epochs", default="5,10,20,40")
    args = ap.parse_args()
    cfg = resolve(args, "leaky")
    split, spec, models, _ = base_pair(cfg)
    point = {"defense": "past", "lambda": cfg.defense.lam[0], "alpha": cfg.defense.alpha[-1]}
    rows = []
    for e in (int(t) for t in args.epochs.split(",")):
        row, _ = evaluate_point(replace(cfg, tuning_epochs=e), point, models, spec, split)
        rows.append({"tuning_epochs": e, **row})
    show(rows, ["tuning_epochs", "test_acc", "adv_loss", "max_adv", "loss_gap"])
    write(args.out, rows)


if __name__ == "__main__":
    main()
