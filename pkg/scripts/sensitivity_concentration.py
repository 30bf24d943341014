"""How concentrated is the loss-gap gradient across parameters of a converged model?

Writes the top-q share curve and the fraction of parameters below a range of
sensitivity thresholds.
"""

import numpy as np

from _common import base_pair, ex, parser, resolve, show, write
from past.tuning import member_sample, privacy_sensitivity, sensitivity_concentration


def main():
    args = parser(__doc__).parse_args()
    cfg = resolve(args)
    split, spec, models, _ = base_pair(cfg)
    infer = split.target_inference
    members = member_sample(split.target_train, len(infer), ex.derive_seed(cfg.seed, "tune/target"))
    raw = privacy_sensitivity(models["target"], spec, members, infer)
    below, share = sensitivity_concentration(raw)
    rel = raw / raw.max()
    rows = [{"kind": "top_quantile_share", "x": q, "value": share(q)} for q in np.linspace(0.05, 1.0, 20)]
    rows += [{"kind": "fraction_below_rel", "x": t, "value": float(np.mean(rel < t))}
             for t in (1e-3, 1e-2, 0.05, 0.1, 0.2, 0.5)]
    show(rows, ["kind", "x", "value"])
    write(args.out, rows)


if __name__ == "__main__":
    main()
