"""Synthetic classification data and the three data-arrival protocols."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROTOCOLS = ("warm_start", "continual", "class_incremental")
DEFAULT_CHUNKS = {"warm_start": 2, "continual": 10, "class_incremental": 20}


@dataclass(frozen=True)
class DatasetSpec:
    generator: str = "gaussian_clusters"
    num_classes: int = 10
    input_dim: int = 32
    samples_per_class: int = 500
    test_samples_per_class: int = 100
    noise: float = 0.5
    radius: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.generator != "gaussian_clusters":
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.num_classes < 1 or self.samples_per_class < 1 or self.input_dim < 1:
            raise ValueError("dataset needs at least one class, one sample and one feature")
        if self.test_samples_per_class < 1:
            raise ValueError("test_samples_per_class must be positive")
        if self.noise < 0 or self.radius <= 0:
            raise ValueError("noise must be nonnegative and radius positive")


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Split":
        return Split(self.x[idx], self.y[idx])


def generate_dataset(spec: DatasetSpec) -> tuple[Split, Split]:
    """Gaussian clusters: one mean per class on the sphere of radius ``spec.radius``.

    Train and test samples are separate draws around the same means.
    """
    rng = np.random.default_rng(spec.seed)
    means = rng.standard_normal((spec.num_classes, spec.input_dim))
    means *= spec.radius / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(per_class: int) -> Split:
        y = np.repeat(np.arange(spec.num_classes), per_class)
        x = means[y] + spec.noise * rng.standard_normal((y.size, spec.input_dim))
        order = rng.permutation(y.size)
        return Split(x[order], y[order])

    train = draw(spec.samples_per_class)
    test = draw(spec.test_samples_per_class)
    return train, test


@dataclass(frozen=True)
class StreamSpec:
    protocol: str = "continual"
    num_chunks: int | None = None
    first_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}")
        if self.num_chunks is not None and self.num_chunks < 1:
            raise ValueError("num_chunks must be positive")
        if self.protocol == "warm_start" and self.num_chunks not in (None, 2):
            raise ValueError("warm_start uses exactly 2 chunks")
        if not 0.0 < self.first_fraction <= 1.0:
            raise ValueError("first_fraction must lie in (0, 1]")

    @property
    def chunks(self) -> int:
        return self.num_chunks or DEFAULT_CHUNKS[self.protocol]


@dataclass
class TaskStream:
    """Cumulative per-chunk training indices plus the classes visible in each chunk."""

    spec: StreamSpec
    train_indices: list[np.ndarray]
    classes: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.train_indices)


def build_stream(spec: StreamSpec, train: Split, num_classes: int) -> TaskStream:
    rng = np.random.default_rng(spec.seed)
    n = len(train)
    all_classes = np.arange(num_classes)
    if spec.protocol == "class_incremental":
        k = spec.chunks
        if num_classes % k != 0:
            raise ValueError(f"{num_classes} classes cannot be split into {k} equal phases")
        order = rng.permutation(num_classes)
        per = num_classes // k
        classes = [np.sort(order[: per * (c + 1)]) for c in range(k)]
        idx = [np.flatnonzero(np.isin(train.y, cl)) for cl in classes]
        return TaskStream(spec, idx, classes)
    perm = rng.permutation(n)
    if spec.protocol == "warm_start":
        first = max(1, int(round(spec.first_fraction * n)))
        idx = [np.sort(perm[:first]), np.arange(n)]
    else:
        k = spec.chunks
        idx = [np.sort(perm[: max(1, (n * (c + 1)) // k)]) for c in range(k)]
    return TaskStream(spec, idx, [all_classes] * len(idx))
