"""Mean loss-gap sensitivity per module (layer weight / bias) across PAST epochs."""

from _common import base_pair, ex, parser, resolve, write


def main():
    args = parser(__doc__).parse_args()
    cfg = resolve(args)
    split, spec, models, _ = base_pair(cfg)
    point = {"defense": "past", "lambda": cfg.defense.lam[0], "alpha": cfg.defense.alpha[0]}
    _, trace = ex.apply_defense(cfg, point, models["target"], spec, split, "target")
    rows = [{"epoch": r.epoch, "module": name, "mean_sensitivity": v}
            for r in trace for name, v in r.module_sensitivity.items()]
    for name in trace[0].module_sensitivity:
        series = [r.module_sensitivity[name] for r in trace]
        print(f"{name:>14}: {series[0]:.3e} -> {series[-1]:.3e}")
    write(args.out, rows)


if __name__ == "__main__":
    main()
