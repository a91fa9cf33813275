"""Synthetic classification datasets and IID / by-label client partitioning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

__all__ = [
    "Dataset",
    "synth_clusters",
    "partition_iid",
    "partition_by_label",
    "save_csv",
    "load_csv",
]


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n, d) float32 with integer class labels in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise InvalidInputError("features must be (n, d), labels (n,)")
        if len(self.features) != len(self.labels):
            raise InvalidInputError("features and labels length mismatch")
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise InvalidInputError("labels must lie in [0, num_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)

    def batch(self, start: int, size: int) -> "Dataset":
        """Contiguous slice of `size` samples starting at `start`, wrapping cyclically."""
        n = len(self)
        if n == 0:
            raise InvalidInputError("cannot take a batch of an empty dataset")
        idx = (start + np.arange(size)) % n
        return self.subset(idx)


def class_means(num_classes: int, dim: int) -> np.ndarray:
    """Deterministic simplex-like layout: unit basis directions, radius growing
    once the basis is exhausted."""
    means = np.zeros((num_classes, dim), dtype=np.float32)
    for c in range(num_classes):
        means[c, c % dim] = 1.0 + c // dim
    return means


def synth_clusters(
    num_classes: int, dim: int, samples: int, spread: float, seed: int
) -> Dataset:
    """Gaussian blobs, one per class, with near-exactly balanced labels."""
    if min(num_classes, dim, samples) < 1:
        raise InvalidInputError("num_classes, dim and samples must all be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(samples, dtype=np.int64) % num_classes)
    means = class_means(num_classes, dim)
    noise = spread * rng.standard_normal((samples, dim))
    features = (means[labels] + noise).astype(np.float32)
    return Dataset(features, labels, num_classes)


def partition_iid(dataset: Dataset, num_clients: int, seed: int) -> list[Dataset]:
    """Random permutation split into near-equal disjoint shards (sizes differ by <= 1)."""
    if num_clients < 1:
        raise InvalidConfigError("num_clients must be >= 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    return [dataset.subset(part) for part in np.array_split(order, num_clients)]


def partition_by_label(
    dataset: Dataset, num_clients: int, labels_per_client: int, seed: int
) -> list[Dataset]:
    """Non-IID split: each client receives samples from at most labels_per_client classes.

    Class slots are dealt round-robin (each class covered at least once),
    shuffled, and each class's samples are split across its slots.
    """
    if num_clients < 1 or labels_per_client < 1:
        raise InvalidConfigError("num_clients and labels_per_client must be >= 1")
    k = dataset.num_classes
    total_slots = num_clients * labels_per_client
    if total_slots < k:
        raise InvalidConfigError(
            f"{num_clients} clients x {labels_per_client} labels cannot cover "
            f"{k} classes"
        )
    rng = np.random.default_rng(seed)
    slots = np.tile(np.arange(k), -(-total_slots // k))[:total_slots]
    slots = rng.permutation(slots)

    slot_owner = np.repeat(np.arange(num_clients), labels_per_client)
    per_client: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for c in range(k):
        owners = slot_owner[slots == c]
        class_idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        for owner, chunk in zip(owners, np.array_split(class_idx, len(owners))):
            per_client[int(owner)].append(chunk)

    shards = []
    for chunks in per_client:
        idx = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
        shards.append(dataset.subset(rng.permutation(idx)))
    return shards


def save_csv(dataset: Dataset, path) -> None:
    """Header row `f0,...,f{d-1},label`, then one row per sample."""
    header = ",".join(f"f{i}" for i in range(dataset.dim)) + ",label"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row, label in zip(dataset.features, dataset.labels):
            fh.write(",".join(repr(float(x)) for x in row) + f",{int(label)}\n")


def load_csv(path, num_classes: int | None = None) -> Dataset:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    features = raw[:, :-1].astype(np.float32)
    labels = raw[:, -1].astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 1
    return Dataset(features, labels, num_classes)
