"""Attack advantage, P1 score, sparsity statistics and run summaries."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np


def attack_advantage(predictions, memberships) -> float:
    """2 * Pr(prediction == membership) - 1."""
    pred = np.asarray(predictions)
    mem = np.asarray(memberships)
    if pred.shape != mem.shape:
        raise ValueError("predictions and memberships differ in length")
    if pred.size == 0:
        raise ValueError("empty prediction vector")
    if not np.isin(mem, (0, 1)).all():
        raise ValueError("memberships must be 0/1")
    # one rounding step, so the value is exactly antisymmetric under complementation
    return float(2 * int(np.count_nonzero(pred == mem)) - pred.size) / pred.size


def _confusion(predictions, memberships):
    pred = np.asarray(predictions).astype(bool)
    mem = np.asarray(memberships).astype(bool)
    pos, neg = int(np.count_nonzero(mem)), int(np.count_nonzero(~mem))
    if pos == 0 or neg == 0:
        raise ValueError("need both members and non-members")
    return int(np.count_nonzero(pred & mem)), int(np.count_nonzero(pred & ~mem)), pos, neg


def tpr_fpr(predictions, memberships) -> tuple[float, float]:
    tp, fp, pos, neg = _confusion(predictions, memberships)
    return tp / pos, fp / neg


def tpr_minus_fpr(predictions, memberships) -> float:
    """TPR - FPR evaluated exactly from the confusion counts, rounded once."""
    tp, fp, pos, neg = _confusion(predictions, memberships)
    return float(Fraction(tp, pos) - Fraction(fp, neg))


def p1_score(acc: float, adv: float) -> float:
    """Harmonic mean of accuracy and (1 - advantage); negative advantage counts as 0."""
    priv = 1.0 - min(max(adv, 0.0), 1.0)
    if acc + priv == 0:
        return 0.0
    return 2.0 * (acc * priv) / (acc + priv)


def gini_index(values) -> float:
    """Hurley-Rickard Gini of |values|; 0 for equal magnitudes, 1 - 1/N for one-hot."""
    c = np.sort(np.abs(np.asarray(values, dtype=np.float64).ravel()))
    if c.size == 0:
        raise ValueError("empty vector")
    total = c.sum()
    if total == 0:
        raise ValueError("Gini index undefined for an all-zero vector")
    n = c.size
    k = np.arange(1, n + 1)
    return float(1.0 - 2.0 * np.sum((c / total) * ((n - k + 0.5) / n)))


def near_zero_fraction(values, tol: float = 1e-3) -> float:
    if not tol > 0:
        raise ValueError("tol must be > 0")
    v = np.asarray(values, dtype=np.float64).ravel()
    return float(np.count_nonzero(np.abs(v) < tol)) / v.size


@dataclass
class EvalSummary:
    test_accuracy: float
    per_attack_advantage: dict
    max_advantage: float
    p1: float
    gini: float
    near_zero_fraction: float
    loss_gap: float

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(trace, attack_report, eval_results, params) -> EvalSummary:
    """Assemble the headline numbers of one experiment.

    ``eval_results`` must provide ``test_accuracy`` and ``loss_gap``,
    either as attributes or mapping keys; ``params`` is a ParameterStore
    or raw vector.
    """
    if attack_report is None or eval_results is None or params is None:
        raise ValueError("summarize needs an attack report, evaluation results and parameters")
    get = eval_results.get if isinstance(eval_results, dict) else lambda k: getattr(eval_results, k, None)
    acc, gap = get("test_accuracy"), get("loss_gap")
    if acc is None or gap is None:
        raise ValueError("evaluation results lack test_accuracy or loss_gap")
    advs = dict(attack_report.advantages)
    if not advs:
        raise ValueError("attack report holds no attacks")
    max_adv = max(advs.values())
    theta = getattr(params, "values", params)
    return EvalSummary(
        test_accuracy=float(acc),
        per_attack_advantage=advs,
        max_advantage=max_adv,
        p1=p1_score(float(acc), max_adv),
        gini=gini_index(theta),
        near_zero_fraction=near_zero_fraction(theta),
        loss_gap=float(gap),
    )
