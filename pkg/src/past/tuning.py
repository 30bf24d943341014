"""Privacy-aware sparsity tuning and the regularized baselines it is compared to.

The defense fine-tunes a converged model with a weighted l1 penalty whose
per-parameter weights come from the gradient of the member/non-member loss
gap. Weights are refreshed once per epoch and held fixed inside it; the
penalty is applied as a proximal soft-threshold after every SGD step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, SplitSet, batch_iter
from .metrics import gini_index, near_zero_fraction
from .nn import (
    OptimConfig,
    OptimizerState,
    ParameterStore,
    backward,
    cosine_lr,
    cross_entropy,
    evaluate,
    forward,
    loss_and_grad,
    sgd_step,
)

KINK = 1e-12


@dataclass(frozen=True)
class PastConfig:
    lam: float = 1e-4
    alpha: float = 2.5
    tuning_epochs: int = 20
    standard_epochs: int = 60
    gap_batch_limit: int | None = None
    norm_order: int = 1  # 2 = adaptive weights on an l2 penalty (ablation only)

    def __post_init__(self):
        if self.norm_order not in (1, 2):
            raise ValueError("norm_order must be 1 or 2")
        if self.lam < 0 or self.alpha < 0:
            raise ValueError("lambda and alpha must be >= 0")
        if self.tuning_epochs < 1 or self.standard_epochs < 1:
            raise ValueError("epoch counts must be positive")
        if self.gap_batch_limit is not None and self.gap_batch_limit < 1:
            raise ValueError("gap_batch_limit must be a positive integer")


@dataclass(frozen=True)
class SensitivityMap:
    raw: np.ndarray
    gamma: np.ndarray
    computed_at_epoch: int


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    lr: float
    loss_gap: float
    train_acc: float
    test_acc: float
    gini: float
    near_zero_fraction: float
    infer_gap: float | None = None
    module_sensitivity: dict = field(default_factory=dict)


@dataclass
class TuningTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def extend(self, other: "TuningTrace") -> "TuningTrace":
        return TuningTrace(self.records + other.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]


# ---------------------------------------------------------------- loss gap


def _capped(data: Dataset, limit: int | None, batch_size: int) -> Dataset:
    if limit is None or limit * batch_size >= len(data):
        return data
    return data.subset(np.arange(limit * batch_size))


def mean_loss_and_grad(params, spec, data: Dataset) -> tuple[float, np.ndarray]:
    if len(data) == 0:
        raise ValueError("empty dataset")
    return loss_and_grad(params, spec, data.features, data.labels)


def loss_gap(params, spec, members: Dataset, nonmembers: Dataset) -> float:
    if len(members) == 0 or len(nonmembers) == 0:
        raise ValueError("loss gap needs non-empty member and non-member sets")
    lm = evaluate(params, spec, members).mean_loss
    ln = evaluate(params, spec, nonmembers).mean_loss
    return abs(lm - ln)


def privacy_sensitivity(params, spec, members, nonmembers, gap_batch_limit=None, batch_size=128) -> np.ndarray:
    """|d G / d theta| with G = |mean loss(members) - mean loss(non-members)|."""
    if len(members) == 0 or len(nonmembers) == 0:
        raise ValueError("sensitivity needs non-empty member and non-member sets")
    members = _capped(members, gap_batch_limit, batch_size)
    nonmembers = _capped(nonmembers, gap_batch_limit, batch_size)
    lm, gm = mean_loss_and_grad(params, spec, members)
    ln, gn = mean_loss_and_grad(params, spec, nonmembers)
    diff = gm - gn
    if abs(lm - ln) < KINK:
        return np.abs(diff)
    return np.abs(math.copysign(1.0, lm - ln) * diff)


def normalize_gamma(raw: np.ndarray, segments) -> np.ndarray:
    """Rescale sensitivities so each segment averages to 1."""
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(raw < 0):
        raise ValueError("raw sensitivities must be non-negative")
    gamma = np.empty_like(raw)
    for seg in segments:
        part = raw[seg.slice]
        total = part.sum()
        if total < 1e-12:
            gamma[seg.slice] = 1.0
        else:
            gamma[seg.slice] = seg.length * (part / total)
    return gamma


def sensitivity_map(params, spec, members, nonmembers, epoch=0, gap_batch_limit=None, batch_size=128) -> SensitivityMap:
    raw = privacy_sensitivity(params, spec, members, nonmembers, gap_batch_limit, batch_size)
    return SensitivityMap(raw, normalize_gamma(raw, params.segments), epoch)


def module_mean_sensitivity(raw: np.ndarray, segments) -> dict:
    return {seg.name: float(raw[seg.slice].mean()) for seg in segments}


def past_penalty(params, gamma, alpha: float, lam: float) -> tuple[float, np.ndarray]:
    """Penalty value lam * sum(gamma^alpha * |theta|) and per-parameter strengths."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if alpha < 0 or np.any(gamma < 0):
        raise ValueError("gamma and alpha must be non-negative")
    theta = getattr(params, "values", params)
    # numpy defines 0**0 == 1, so alpha=0 gives plain l1
    strength = lam * np.power(gamma, alpha)
    return float(np.sum(strength * np.abs(theta))), strength


def proximal_shrink(params, strength, lr: float):
    """Soft-threshold each coordinate by lr * strength."""
    theta = getattr(params, "values", params)
    thresh = lr * np.asarray(strength, dtype=np.float64)
    if np.any(thresh < 0):
        raise ValueError("shrinkage strengths must be non-negative")
    out = np.sign(theta) * np.maximum(np.abs(theta) - thresh, 0.0)
    return params.with_values(out) if isinstance(params, ParameterStore) else out


def sensitivity_concentration(raw):
    """Return ``(fraction_below, top_quantile_share)`` callables over a sensitivity vector."""
    raw = np.asarray(raw, dtype=np.float64).ravel()
    if np.any(raw < 0):
        raise ValueError("raw sensitivities must be non-negative")
    total = raw.sum()
    if total == 0:
        raise ValueError("sensitivity vector is all zero")
    desc = np.sort(raw)[::-1]
    csum = np.cumsum(desc)

    def fraction_below(t: float) -> float:
        return float(np.count_nonzero(raw < t)) / raw.size

    def top_quantile_share(q: float) -> float:
        if not 0 <= q <= 1:
            raise ValueError("q must be in [0, 1]")
        k = math.ceil(q * raw.size - 1e-9)
        if k >= raw.size:
            return 1.0  # cumsum and sum round differently
        return 0.0 if k == 0 else float(csum[k - 1] / total)

    return fraction_below, top_quantile_share


# ---------------------------------------------------------------- training loops


def _record(params, spec, epoch, phase, lr, train, test, infer_pair=None, module_sens=None) -> EpochRecord:
    tr = evaluate(params, spec, train)
    te = evaluate(params, spec, test)
    infer_gap = None
    if infer_pair is not None:
        infer_gap = loss_gap(params, spec, *infer_pair)
    return EpochRecord(
        epoch=epoch,
        phase=phase,
        lr=lr,
        loss_gap=abs(tr.mean_loss - te.mean_loss),
        train_acc=tr.accuracy,
        test_acc=te.accuracy,
        gini=gini_index(params.values) if np.any(params.values) else 0.0,
        near_zero_fraction=near_zero_fraction(params.values),
        infer_gap=infer_gap,
        module_sensitivity=module_sens or {},
    )


def _run_epochs(params, spec, train, test, epochs, opt: OptimConfig, seed, phase,
                strength_fn=None, norm_order=1, extra_grad_fn=None, infer_pair=None):
    """Shared mini-batch loop.

    ``strength_fn(params, epoch)`` returns (strengths, module_sensitivity),
    held fixed for the epoch. With ``norm_order=1`` they drive a proximal
    soft-threshold after each step; with 2 they add ``2 * strength * theta``
    to the gradient. ``extra_grad_fn(params)`` adds to every mini-batch
    gradient.
    """
    state = OptimizerState.fresh(opt, len(params))
    trace = TuningTrace()
    for epoch in range(epochs):
        lr = cosine_lr(epoch, epochs, opt.lr0)
        strength, module_sens = (None, None) if strength_fn is None else strength_fn(params, epoch)
        for xb, yb in batch_iter(train, opt.batch_size, seed, epoch):
            logits, cache = forward(params, spec, xb)
            loss, _, probs = cross_entropy(logits, yb)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch} ({phase})")
            grad = backward(params, spec, cache, probs, yb)
            if extra_grad_fn is not None:
                grad = grad + extra_grad_fn(params)
            if strength is not None and norm_order == 2:
                grad = grad + 2.0 * strength * params.values
            params = sgd_step(params, grad, state, lr)
            if strength is not None and norm_order == 1:
                params = proximal_shrink(params, strength, lr)
        trace.records.append(_record(params, spec, epoch, phase, lr, train, test, infer_pair, module_sens))
    return params, trace


def standard_train(params, spec, train_set, test_set, epochs, opt, seed=0, infer_pair=None):
    """Plain SGD (no privacy regularizer) with a cosine schedule over ``epochs``."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    return _run_epochs(params, spec, train_set, test_set, epochs, opt, seed, "standard", infer_pair=infer_pair)


def member_sample(train: Dataset, size: int, seed: int) -> Dataset:
    """Fixed seeded subset of the training set used as the member side of the gap."""
    size = min(size, len(train))
    idx = np.sort(np.random.default_rng([seed, 0x5E75]).choice(len(train), size=size, replace=False))
    return train.subset(idx)


def leak_pair(split: SplitSet, side: str):
    # inference set vs. fresh held-out data of the same side's counterpart
    other = "shadow" if side == "target" else "target"
    return split.side(side)[2], getattr(split, f"{other}_test")


def past_tune(params, spec, split: SplitSet, cfg: PastConfig, opt, seed=0, side="target"):
    """Fine-tune with sensitivity-weighted l1 shrinkage.

    Members for the gap are a seeded sample of the training set with the
    size of the inference set, which plays the non-member role.
    """
    train, test, infer = split.side(side)
    members = member_sample(train, len(infer), seed)

    def strength_fn(p, epoch):
        smap = sensitivity_map(p, spec, members, infer, epoch, cfg.gap_batch_limit, opt.batch_size)
        _, strength = past_penalty(p, smap.gamma, cfg.alpha, cfg.lam)
        return strength, module_mean_sensitivity(smap.raw, p.segments)

    return _run_epochs(params, spec, train, test, cfg.tuning_epochs, opt, seed, "past",
                       strength_fn=strength_fn, norm_order=cfg.norm_order, infer_pair=leak_pair(split, side))


def uniform_reg_tune(params, spec, split: SplitSet, lam: float, norm_order: int, epochs: int, opt,
                     seed=0, side="target"):
    """Uniform l1 (proximal) or l2 (gradient 2*lam*theta) fine-tuning."""
    if norm_order not in (1, 2):
        raise ValueError("norm_order must be 1 or 2")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    train, test, _ = split.side(side)
    const = np.full(len(params), float(lam))
    return _run_epochs(params, spec, train, test, epochs, opt, seed, f"l{norm_order}",
                       strength_fn=lambda p, epoch: (const, None), norm_order=norm_order,
                       infer_pair=leak_pair(split, side))


def gap_gradient(params, spec, members, nonmembers) -> np.ndarray:
    """Gradient of G = |mean loss(members) - mean loss(non-members)|."""
    lm, gm = mean_loss_and_grad(params, spec, members)
    ln, gn = mean_loss_and_grad(params, spec, nonmembers)
    sign = 1.0 if lm - ln >= 0 else -1.0
    return sign * (gm - gn)


def lossgap_reg_tune(params, spec, split: SplitSet, mu: float, epochs: int, opt, seed=0, side="target"):
    """Fine-tune on cross-entropy + mu * loss gap(member sample, inference set)."""
    if mu < 0:
        raise ValueError("mu must be >= 0")
    train, test, infer = split.side(side)
    members = member_sample(train, len(infer), seed)
    extra = (lambda p: mu * gap_gradient(p, spec, members, infer)) if mu else None
    return _run_epochs(params, spec, train, test, epochs, opt, seed, "lossgap",
                       extra_grad_fn=extra, infer_pair=leak_pair(split, side))
