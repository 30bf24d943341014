"""Black-box membership inference: threshold attacks on five metrics and an NN attack.

Thresholds and the attack classifier are fit on a shadow model trained by
the same pipeline as the target (same defense, same hyperparameters), then
applied unchanged to the target model's query set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, batch_iter
from .metrics import attack_advantage
from .nn import (
    ModelSpec,
    OptimConfig,
    OptimizerState,
    cosine_lr,
    forward,
    init_model,
    log_softmax,
    loss_and_grad,
    sgd_step,
)

LOG_FLOOR = np.log(1e-12)

# member-if-below for losses/entropies, member-if-above for confidence
DIRECTIONS = {"loss": "below", "confidence": "above", "entropy": "below", "m_entropy": "below"}
THRESHOLD_METRICS = tuple(DIRECTIONS)
ATTACKS = ("correctness", "loss", "confidence", "entropy", "m_entropy", "nn")


@dataclass(frozen=True)
class QuerySet:
    data: Dataset
    membership: np.ndarray

    def __len__(self):
        return len(self.data)


def build_query_set(members: Dataset, nonmembers: Dataset, seed: int, size: int | None = None) -> QuerySet:
    """Balanced query set: ``size`` seeded draws from each side (default: the smaller side)."""
    n = min(len(members), len(nonmembers)) if size is None else size
    if n < 1 or n > len(members) or n > len(nonmembers):
        raise ValueError(f"cannot draw a balanced query set of {n}+{n} from {len(members)} members "
                         f"and {len(nonmembers)} non-members")
    rng = np.random.default_rng([seed, 0xA77])
    mi = np.sort(rng.choice(len(members), n, replace=False))
    ni = np.sort(rng.choice(len(nonmembers), n, replace=False))
    x = np.concatenate([members.features[mi], nonmembers.features[ni]])
    y = np.concatenate([members.labels[mi], nonmembers.labels[ni]])
    m = np.concatenate([np.ones(n, dtype=np.int64), np.zeros(n, dtype=np.int64)])
    return QuerySet(Dataset(x, y, members.num_classes), m)


@dataclass
class MetricScores:
    correctness: np.ndarray
    loss: np.ndarray
    confidence: np.ndarray
    entropy: np.ndarray
    m_entropy: np.ndarray
    probs: np.ndarray
    labels: np.ndarray

    def __getitem__(self, metric):
        return getattr(self, metric)


def scores_from_logits(logits: np.ndarray, labels: np.ndarray) -> MetricScores:
    labels = np.asarray(labels)
    rows = np.arange(labels.shape[0])
    logp = log_softmax(logits)
    p = np.exp(logp)
    p_y = p[rows, labels]
    log_p = np.maximum(logp, LOG_FLOOR)
    log_1mp = np.log(np.maximum(1.0 - p, 1e-12))
    entropy = -np.sum(p * log_p, axis=1)
    others = p * log_1mp
    others[rows, labels] = 0.0
    m_entropy = -(1.0 - p_y) * log_p[rows, labels] - others.sum(axis=1)
    return MetricScores(
        correctness=(logits.argmax(axis=1) == labels).astype(np.int64),
        loss=-logp[rows, labels],
        confidence=p_y,
        entropy=np.maximum(entropy, 0.0),
        m_entropy=np.maximum(m_entropy, 0.0),
        probs=p,
        labels=labels,
    )


def compute_metric_scores(params, spec: ModelSpec, records: Dataset) -> MetricScores:
    if len(records) == 0:
        raise ValueError("no records to score")
    logits, _ = forward(params, spec, records.features)
    return scores_from_logits(logits, records.labels)


# ---------------------------------------------------------------- thresholds


def _predict(scores, tau, direction):
    return (scores < tau) if direction == "below" else (scores > tau)


def balanced_accuracy(pred, membership) -> float:
    pred = np.asarray(pred).astype(bool)
    mem = np.asarray(membership).astype(bool)
    tpr = np.count_nonzero(pred & mem) / np.count_nonzero(mem)
    tnr = np.count_nonzero(~pred & ~mem) / np.count_nonzero(~mem)
    return (tpr + tnr) / 2


def candidate_thresholds(scores) -> np.ndarray:
    """Midpoints between adjacent distinct values, plus one sentinel beyond each end."""
    u = np.unique(scores)
    mids = (u[:-1] + u[1:]) / 2
    return np.concatenate([[-np.inf], mids, [np.inf]])


def best_threshold(scores, membership, direction) -> tuple[float, float]:
    """Threshold maximizing balanced accuracy; ties go to the smallest threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    mem = np.asarray(membership).astype(bool)
    cands = candidate_thresholds(scores)
    pos = np.sort(scores[mem])
    neg = np.sort(scores[~mem])
    n_pos, n_neg = pos.size, neg.size
    if direction == "below":
        tp = np.searchsorted(pos, cands, side="left")
        tn = n_neg - np.searchsorted(neg, cands, side="left")
    else:
        tp = n_pos - np.searchsorted(pos, cands, side="right")
        tn = np.searchsorted(neg, cands, side="right")
    acc = (tp / n_pos + tn / n_neg) / 2
    i = int(np.argmax(acc))  # first maximum == smallest threshold
    return float(cands[i]), float(acc[i])


@dataclass
class ThresholdTable:
    directions: dict
    global_thresholds: dict
    per_class: dict = field(default_factory=dict)  # metric -> {class: tau}

    def lookup(self, metric, label) -> float:
        return self.per_class[metric].get(int(label), self.global_thresholds[metric])


def calibrate_thresholds(shadow_scores: MetricScores, shadow_membership, labels) -> ThresholdTable:
    mem = np.asarray(shadow_membership).astype(bool)
    labels = np.asarray(labels)
    if mem.all() or not mem.any():
        raise ValueError("shadow records must include both members and non-members")
    table = ThresholdTable(dict(DIRECTIONS), {}, {})
    for metric, direction in DIRECTIONS.items():
        s = shadow_scores[metric]
        table.global_thresholds[metric], _ = best_threshold(s, mem, direction)
        per = {}
        for k in np.unique(labels):
            sel = labels == k
            if mem[sel].all() or not mem[sel].any():
                continue  # falls back to global
            per[int(k)], _ = best_threshold(s[sel], mem[sel], direction)
        table.per_class[metric] = per
    return table


def metric_attack(scores: MetricScores, thresholds: ThresholdTable | None, labels, metric: str) -> np.ndarray:
    labels = np.asarray(labels)
    if metric == "correctness":
        return scores.correctness.astype(np.int64)
    direction = thresholds.directions[metric]
    tau = np.array([thresholds.lookup(metric, k) for k in labels], dtype=np.float64)
    return _predict(scores[metric], tau, direction).astype(np.int64)


# ---------------------------------------------------------------- NN attack

NN_ATTACK_OPT = OptimConfig(lr0=0.05, momentum=0.9, weight_decay=5e-4, batch_size=128)


def nn_attack_features(probs: np.ndarray, labels, num_classes: int) -> np.ndarray:
    onehot = np.zeros((len(labels), num_classes))
    onehot[np.arange(len(labels)), labels] = 1.0
    return np.hstack([probs, onehot])


@dataclass
class NNAttack:
    spec: ModelSpec
    params: object
    mean: np.ndarray
    scale: np.ndarray

    def predict(self, features: np.ndarray) -> np.ndarray:
        logits, _ = forward(self.params, self.spec, (features - self.mean) / self.scale)
        return logits.argmax(axis=1).astype(np.int64)


def train_nn_attack(shadow_features, shadow_membership, seed: int, hidden: int = 64,
                    epochs: int = 80, opt: OptimConfig = NN_ATTACK_OPT) -> NNAttack:
    """One-hidden-layer binary MLP on standardized attack features."""
    x = np.asarray(shadow_features, dtype=np.float64)
    y = np.asarray(shadow_membership, dtype=np.int64)
    if np.unique(y).size < 2:
        raise ValueError("NN attack needs both member and non-member shadow records")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    xs = (x - mean) / scale
    spec = ModelSpec(x.shape[1], (hidden,), 2, "relu")
    params = init_model(spec, seed)
    state = OptimizerState.fresh(opt, len(params))
    data = Dataset(xs, y, 2)
    for epoch in range(epochs):
        lr = cosine_lr(epoch, epochs, opt.lr0)
        for xb, yb in batch_iter(data, opt.batch_size, seed, epoch):
            _, grad = loss_and_grad(params, spec, xb, yb)
            params = sgd_step(params, grad, state, lr)
    return NNAttack(spec, params, mean, scale)


# ---------------------------------------------------------------- battery


@dataclass
class AttackReport:
    predictions: dict
    advantages: dict
    accuracies: dict
    thresholds: ThresholdTable | None = None

    @property
    def max_advantage(self) -> float:
        return max(self.advantages.values())

    @property
    def max_attack(self) -> str:
        return max(self.advantages, key=self.advantages.get)


def run_attack_battery(target_params, shadow_params, spec: ModelSpec, query_set: QuerySet,
                       shadow_query_set: QuerySet, seed: int = 0) -> AttackReport:
    shadow_scores = compute_metric_scores(shadow_params, spec, shadow_query_set.data)
    target_scores = compute_metric_scores(target_params, spec, query_set.data)
    table = calibrate_thresholds(shadow_scores, shadow_query_set.membership, shadow_query_set.data.labels)

    preds = {}
    for metric in ("correctness", *THRESHOLD_METRICS):
        preds[metric] = metric_attack(target_scores, table, query_set.data.labels, metric)

    k = spec.num_classes
    attack = train_nn_attack(
        nn_attack_features(shadow_scores.probs, shadow_query_set.data.labels, k),
        shadow_query_set.membership, seed)
    preds["nn"] = attack.predict(nn_attack_features(target_scores.probs, query_set.data.labels, k))

    mem = query_set.membership
    advs = {name: attack_advantage(p, mem) for name, p in preds.items()}
    accs = {name: float(np.mean(p == mem)) for name, p in preds.items()}
    return AttackReport(preds, advs, accs, table)
