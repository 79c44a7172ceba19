"""Synthetic blob datasets, CSV persistence and mini-batch streams."""
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class BlobSpec:
    """Generation spec for Gaussian class clusters.

    ``n`` is the non-test pool, split half into the supernet-train set and
    half into the validation set. ``label_noise`` only touches the train half.
    """
    classes: int = 2
    dim: int = 4
    n: int = 1000
    n_test: int = 500
    separation: float = 3.0
    spread: float = 1.0
    clusters_per_class: int = 1
    label_noise: float = 0.0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("blob datasets need at least two classes")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.n < self.classes:
            raise ValueError(f"n={self.n} must be at least the number of classes ({self.classes})")
        if self.n_test < 0 or self.clusters_per_class < 1:
            raise ValueError("n_test must be >= 0 and clusters_per_class >= 1")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError(f"label_noise must lie in [0, 1), got {self.label_noise}")

    @classmethod
    def from_dict(cls, data: dict) -> "BlobSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown dataset spec keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Dataset:
    """Train (the ground set), validation and held-out test splits."""
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    spec: BlobSpec
    seed: int
    y_train_clean: Optional[np.ndarray] = field(default=None)

    @property
    def n_features(self) -> int:
        return self.X_train.shape[1]

    @property
    def classes(self) -> int:
        return self.spec.classes

    @property
    def noisy_mask(self) -> np.ndarray:
        if self.y_train_clean is None:
            return np.zeros(len(self.y_train), dtype=bool)
        return self.y_train != self.y_train_clean


def gen_blobs(spec: BlobSpec, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    n_clusters = spec.classes * spec.clusters_per_class
    centers = spec.separation * rng.standard_normal((n_clusters, spec.dim))

    total = spec.n + spec.n_test
    labels = rng.permutation(np.arange(total) % spec.classes)
    cluster = labels + spec.classes * rng.integers(0, spec.clusters_per_class, size=total)
    X = centers[cluster] + spec.spread * rng.standard_normal((total, spec.dim))

    X_pool, y_pool = X[: spec.n], labels[: spec.n]
    X_test, y_test = X[spec.n:], labels[spec.n:]

    # alternate assignment within each class keeps both halves balanced to +-1
    order = np.argsort(y_pool, kind="stable")
    train_idx = np.sort(order[0::2])
    val_idx = np.sort(order[1::2])

    y_train = y_pool[train_idx].copy()
    y_clean = y_train.copy()
    if spec.label_noise > 0:
        flip = rng.random(len(y_train)) < spec.label_noise
        shift = rng.integers(1, spec.classes, size=len(y_train))
        y_train[flip] = (y_train[flip] + shift[flip]) % spec.classes

    return Dataset(
        X_train=X_pool[train_idx],
        y_train=y_train,
        X_val=X_pool[val_idx],
        y_val=y_pool[val_idx],
        X_test=X_test,
        y_test=y_test,
        spec=spec,
        seed=seed,
        y_train_clean=y_clean,
    )


def _write_split(path: str, X: np.ndarray, y: np.ndarray) -> None:
    header = ",".join(["label"] + [f"f{i + 1}" for i in range(X.shape[1])])
    table = np.column_stack([y.astype(np.float64), X])
    fmt = ["%d"] + ["%.17g"] * X.shape[1]
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=fmt)


def _read_split(path: str):
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return table[:, 1:], table[:, 0].astype(np.int64)


def save_dataset(ds: Dataset, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write_split(os.path.join(out_dir, "train.csv"), ds.X_train, ds.y_train)
    _write_split(os.path.join(out_dir, "val.csv"), ds.X_val, ds.y_val)
    _write_split(os.path.join(out_dir, "test.csv"), ds.X_test, ds.y_test)
    sidecar = {
        "spec": asdict(ds.spec),
        "seed": ds.seed,
        "noisy_train_indices": np.flatnonzero(ds.noisy_mask).tolist(),
        "clean_labels": ds.y_train_clean.tolist() if ds.y_train_clean is not None else None,
    }
    with open(os.path.join(out_dir, "spec.json"), "w") as f:
        json.dump(sidecar, f, indent=2)


def load_dataset(path: str) -> Dataset:
    with open(os.path.join(path, "spec.json"), "r") as f:
        sidecar = json.load(f)
    X_train, y_train = _read_split(os.path.join(path, "train.csv"))
    X_val, y_val = _read_split(os.path.join(path, "val.csv"))
    X_test, y_test = _read_split(os.path.join(path, "test.csv"))
    clean = sidecar.get("clean_labels")
    return Dataset(
        X_train=X_train, y_train=y_train,
        X_val=X_val, y_val=y_val,
        X_test=X_test, y_test=y_test,
        spec=BlobSpec.from_dict(sidecar["spec"]),
        seed=int(sidecar["seed"]),
        y_train_clean=None if clean is None else np.asarray(clean, dtype=np.int64),
    )


class BatchStream:
    """Endless mini-batches over ``indices``, reshuffled every epoch.

    Each epoch is a partition of ``indices``; the last batch may be short.
    """

    def __init__(self, indices: np.ndarray, batch_size: int, rng: np.random.Generator):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if len(indices) == 0:
            raise ValueError("cannot stream batches from an empty index set")
        self.indices = np.asarray(indices, dtype=np.int64)
        self.batch_size = batch_size
        self.rng = rng
        self.epoch = 0
        self._order = self.rng.permutation(self.indices)
        self._pos = 0

    @property
    def steps_per_epoch(self) -> int:
        return -(-len(self.indices) // self.batch_size)

    def next_batch(self) -> np.ndarray:
        if self._pos >= len(self._order):
            self._order = self.rng.permutation(self.indices)
            self._pos = 0
            self.epoch += 1
        batch = self._order[self._pos:self._pos + self.batch_size]
        self._pos += len(batch)
        return batch
