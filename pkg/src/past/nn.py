"""Small deterministic MLP engine: forward, backward, SGD with momentum, cosine schedule.

Everything is float64 and works on a single flat parameter vector so that
per-parameter quantities (gradients, sensitivities, penalty strengths) are
plain vectors of the same length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    layer_widths: tuple[int, ...]
    num_classes: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if not self.layer_widths:
            raise ValueError("layer_widths must contain at least one hidden layer")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError(f"every hidden width must be positive, got {list(self.layer_widths)}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def dims(self) -> list[int]:
        return [self.input_dim, *self.layer_widths, self.num_classes]

    @property
    def num_params(self) -> int:
        d = self.dims
        return sum(a * b + b for a, b in zip(d[:-1], d[1:]))


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.length)


def make_segments(spec: ModelSpec) -> tuple[Segment, ...]:
    segs = []
    offset = 0
    d = spec.dims
    for i, (fan_in, fan_out) in enumerate(zip(d[:-1], d[1:])):
        segs.append(Segment(f"layer{i}.weight", offset, fan_in * fan_out))
        offset += fan_in * fan_out
        segs.append(Segment(f"layer{i}.bias", offset, fan_out))
        offset += fan_out
    return tuple(segs)


@dataclass(frozen=True)
class ParameterStore:
    """Flat parameter vector plus its partition into named module segments."""

    values: np.ndarray
    segments: tuple[Segment, ...]

    def __post_init__(self):
        expect = 0
        for seg in self.segments:
            if seg.offset != expect or seg.length < 1:
                raise ValueError(f"segment {seg.name} breaks the contiguous layout at offset {seg.offset}")
            expect += seg.length
        if expect != self.values.shape[0]:
            raise ValueError(f"segments cover {expect} entries but vector has {self.values.shape[0]}")

    def __len__(self):
        return self.values.shape[0]

    def with_values(self, values: np.ndarray) -> "ParameterStore":
        return ParameterStore(np.asarray(values, dtype=np.float64), self.segments)

    def segment(self, name: str) -> np.ndarray:
        for seg in self.segments:
            if seg.name == name:
                return self.values[seg.slice]
        raise KeyError(name)

    def layers(self, spec: ModelSpec) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views per layer; W has shape (fan_in, fan_out)."""
        d = spec.dims
        if len(self.segments) != 2 * (len(d) - 1) or len(self) != spec.num_params:
            raise ValueError("parameter store does not match model spec")
        out = []
        for i, (fan_in, fan_out) in enumerate(zip(d[:-1], d[1:])):
            w_seg, b_seg = self.segments[2 * i], self.segments[2 * i + 1]
            out.append((self.values[w_seg.slice].reshape(fan_in, fan_out), self.values[b_seg.slice]))
        return out


def init_model(spec: ModelSpec, seed: int) -> ParameterStore:
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    segments = make_segments(spec)
    values = np.zeros(spec.num_params, dtype=np.float64)
    d = spec.dims
    for i, fan_in in enumerate(d[:-1]):
        seg = segments[2 * i]
        bound = math.sqrt(1.0 / fan_in)
        values[seg.slice] = rng.uniform(-bound, bound, size=seg.length)
    return ParameterStore(values, segments)


@dataclass
class BatchCache:
    inputs: list[np.ndarray]  # input to each linear layer
    preacts: list[np.ndarray]  # output of each linear layer (last one = logits)
    labels: np.ndarray | None = None
    fingerprint: int = 0


def _fingerprint(params: ParameterStore) -> int:
    return hash(params.values.tobytes())


def _act(name, z):
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name, z, a):
    return (z > 0).astype(np.float64) if name == "relu" else 1.0 - a * a


def forward(params: ParameterStore, spec: ModelSpec, inputs: np.ndarray) -> tuple[np.ndarray, BatchCache]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"expected inputs of shape (B, {spec.input_dim}), got {x.shape}")
    layers = params.layers(spec)
    cache = BatchCache(inputs=[], preacts=[], fingerprint=_fingerprint(params))
    a = x
    for i, (w, b) in enumerate(layers):
        cache.inputs.append(a)
        z = a @ w + b
        cache.preacts.append(z)
        a = _act(spec.activation, z) if i < len(layers) - 1 else z
    return a, cache


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean loss, per-example loss and softmax probabilities."""
    labels = np.asarray(labels)
    k = logits.shape[1]
    if labels.shape[0] != logits.shape[0]:
        raise ValueError("labels and logits disagree on batch size")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    logp = log_softmax(logits)
    per_example = -logp[np.arange(labels.shape[0]), labels]
    probs = np.exp(logp)
    return float(per_example.mean()), per_example, probs


def backward_logits(params: ParameterStore, spec: ModelSpec, cache: BatchCache, dlogits: np.ndarray) -> np.ndarray:
    """Backpropagate an arbitrary logit gradient to a flat parameter gradient."""
    if cache.fingerprint != _fingerprint(params):
        raise ValueError("cache was produced by a different parameter vector")
    layers = params.layers(spec)
    if dlogits.shape != cache.preacts[-1].shape:
        raise ValueError("logit gradient does not match cached forward pass")
    grad = np.empty(len(params), dtype=np.float64)
    delta = dlogits
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        w_seg, b_seg = params.segments[2 * i], params.segments[2 * i + 1]
        grad[w_seg.slice] = (cache.inputs[i].T @ delta).ravel()
        grad[b_seg.slice] = delta.sum(axis=0)
        if i > 0:
            a_prev = cache.inputs[i]
            delta = (delta @ w.T) * _act_grad(spec.activation, cache.preacts[i - 1], a_prev)
    return grad


def backward(params, spec, cache, probs, labels) -> np.ndarray:
    """Gradient of the mean cross-entropy over the cached batch."""
    labels = np.asarray(labels)
    if probs.shape[0] != labels.shape[0]:
        raise ValueError("probs and labels disagree on batch size")
    dlogits = probs.copy()
    dlogits[np.arange(labels.shape[0]), labels] -= 1.0
    dlogits /= labels.shape[0]
    return backward_logits(params, spec, cache, dlogits)


def loss_and_grad(params, spec, x, y) -> tuple[float, np.ndarray]:
    logits, cache = forward(params, spec, x)
    loss, _, probs = cross_entropy(logits, y)
    return loss, backward(params, spec, cache, probs, y)


@dataclass(frozen=True)
class OptimConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class OptimizerState:
    hyper: OptimConfig
    momentum_buffers: np.ndarray = field(default=None)

    @classmethod
    def fresh(cls, hyper: OptimConfig, num_params: int) -> "OptimizerState":
        return cls(hyper, np.zeros(num_params, dtype=np.float64))


def sgd_step(params: ParameterStore, grad: np.ndarray, state: OptimizerState, lr: float) -> ParameterStore:
    """Heavy-ball SGD with coupled weight decay. Updates ``state`` in place."""
    if grad.shape != params.values.shape or state.momentum_buffers.shape != grad.shape:
        raise ValueError("gradient, parameters and momentum buffer lengths disagree")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient entries")
    h = state.hyper
    d_p = grad + h.weight_decay * params.values if h.weight_decay else grad
    state.momentum_buffers = h.momentum * state.momentum_buffers + d_p
    return params.with_values(params.values - lr * state.momentum_buffers)


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr0 * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


@dataclass
class EvalResult:
    accuracy: float
    mean_loss: float
    per_example_losses: np.ndarray
    probs: np.ndarray


def evaluate(params, spec, dataset) -> EvalResult:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits, _ = forward(params, spec, dataset.features)
    mean_loss, per_example, probs = cross_entropy(logits, dataset.labels)
    acc = float(np.mean(logits.argmax(axis=1) == dataset.labels))
    return EvalResult(acc, mean_loss, per_example, probs)
