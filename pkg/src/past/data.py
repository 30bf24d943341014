"""Datasets, synthetic Gaussian-cluster generator, CSV I/O and the six-way split."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

SPLIT_NAMES = (
    "target_train",
    "target_test",
    "target_inference",
    "shadow_train",
    "shadow_test",
    "shadow_inference",
)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"features {x.shape} and labels {y.shape} are inconsistent")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite values")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def repeat(self, times: int) -> "Dataset":
        return Dataset(np.tile(self.features, (times, 1)), np.tile(self.labels, times), self.num_classes)


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    dim: int = 32
    per_class_count: int = 600
    cluster_spread: float = 1.2
    label_noise: float = 0.1

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.dim < 1 or self.per_class_count < 1:
            raise ValueError("dim and per_class_count must be positive")
        if not self.cluster_spread > 0:
            raise ValueError("cluster_spread must be > 0")
        if not 0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must be in [0, 0.5)")


def gen_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    """K Gaussian clusters around random unit-norm centers.

    ``cluster_spread`` is the per-coordinate standard deviation.

    Rows are ordered by generating cluster (row ``i`` comes from cluster
    ``i // per_class_count``). A ``label_noise`` fraction of rows, chosen
    independently, get their label replaced by a different class drawn
    uniformly.
    """
    rng = np.random.default_rng(seed)
    k, d, n = spec.num_classes, spec.dim, spec.per_class_count
    centers = rng.standard_normal((k, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    clean = np.repeat(np.arange(k), n)
    x = centers[clean] + spec.cluster_spread * rng.standard_normal((k * n, d))
    labels = clean.copy()
    flip = rng.random(k * n) < spec.label_noise
    shift = rng.integers(1, k, size=k * n)
    labels[flip] = (clean[flip] + shift[flip]) % k
    return Dataset(x, labels, k)


def load_csv(path, has_header: bool = False) -> Dataset:
    """Read ``label,f1,...,fd`` rows; labels are remapped to a dense 0..K-1 range."""
    path = Path(path)
    raw_labels, rows = [], []
    width = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise ValueError(f"{path}: row {lineno} needs a label and at least one feature")
            elif len(row) != width:
                raise ValueError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
            try:
                label = float(row[0])
                feats = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno} has a non-numeric cell ({exc})") from None
            if label != int(label):
                raise ValueError(f"{path}: row {lineno} label {row[0]!r} is not an integer")
            raw_labels.append(int(label))
            rows.append(feats)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    classes, dense = np.unique(np.asarray(raw_labels), return_inverse=True)
    num_classes = max(len(classes), 2)
    return Dataset(np.asarray(rows, dtype=np.float64), dense.astype(np.int64), num_classes)


def save_csv(data: Dataset, path, header: bool = False) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(["label"] + [f"x{j}" for j in range(data.dim)])
        for label, row in zip(data.labels, data.features):
            writer.writerow([str(int(label))] + [format(v, ".17g") for v in row])


@dataclass(frozen=True)
class SplitSet:
    target_train: Dataset
    target_test: Dataset
    target_inference: Dataset
    shadow_train: Dataset
    shadow_test: Dataset
    shadow_inference: Dataset
    indices: dict | None = None

    def side(self, which: str) -> tuple[Dataset, Dataset, Dataset]:
        """(train, test, inference) for ``"target"`` or ``"shadow"``."""
        if which not in ("target", "shadow"):
            raise ValueError(which)
        return tuple(getattr(self, f"{which}_{part}") for part in ("train", "test", "inference"))


def six_split(data: Dataset, seed: int) -> SplitSet:
    n = len(data)
    if n < 6:
        raise ValueError(f"need at least 6 records to split six ways, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, 6)
    subsets = {name: data.subset(idx) for name, idx in zip(SPLIT_NAMES, parts)}
    return SplitSet(**subsets, indices=dict(zip(SPLIT_NAMES, parts)))


def batch_iter(data: Dataset, batch_size: int, seed: int, epoch: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (features, labels) mini-batches in an order keyed by (seed, epoch)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(data))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield data.features[idx], data.labels[idx]
