"""Synthetic conditional dataset families and a bit-exact dataset file format.

Two families stand in for real data: Gaussian blobs on a circle (classification)
and a spiral "ring" curve with uniform scalar labels (regression).  Regression
labels live in [0, 1] internally; the task carries (lo, hi) metadata used only
when reporting MAE in original label units.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from . import rng

PROVENANCE_TAGS = ("real", "fake_raw", "fake_m1", "fake_m2")

FORMAT_HEADER = "cgankd-dataset v1"


@dataclass(frozen=True)
class ClassificationTask:
    n_classes: int

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("classification needs at least 2 classes")

    kind = "classification"


@dataclass(frozen=True)
class RegressionTask:
    label_lo: float = 0.0
    label_hi: float = 1.0

    def __post_init__(self):
        if not self.label_hi > self.label_lo:
            raise ValueError("label_hi must exceed label_lo")

    kind = "regression"


Task = Union[ClassificationTask, RegressionTask]


class Sample(NamedTuple):
    features: np.ndarray
    label: object  # int class index or float in [0, 1]
    provenance: str


@dataclass
class Dataset:
    task: Task
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray    # (n,) int64 or float64
    provenance: np.ndarray  # (n,) strings from PROVENANCE_TAGS

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        n = self.features.shape[0]
        if self.task.kind == "classification":
            self.labels = np.asarray(self.labels, dtype=np.int64)
        else:
            self.labels = np.asarray(self.labels, dtype=np.float64)
        self.provenance = np.asarray(self.provenance, dtype="U8")
        if self.labels.shape != (n,) or self.provenance.shape != (n,):
            raise ValueError("labels/provenance length mismatch")
        if n and not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite features")
        if n:
            self._check_labels()
        bad = set(self.provenance.tolist()) - set(PROVENANCE_TAGS)
        if bad:
            raise ValueError(f"unknown provenance tags: {sorted(bad)}")

    def _check_labels(self):
        if self.task.kind == "classification":
            if self.labels.min() < 0 or self.labels.max() >= self.task.n_classes:
                raise ValueError("class label out of range")
        else:
            if self.labels.min() < 0.0 or self.labels.max() > 1.0:
                raise ValueError("regression label outside [0, 1]")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def __len__(self):
        return self.n

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __getitem__(self, i: int) -> Sample:
        label = self.labels[i]
        label = int(label) if self.task.kind == "classification" else float(label)
        return Sample(self.features[i], label, str(self.provenance[i]))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.task, self.features[idx], self.labels[idx],
                       self.provenance[idx])

    def with_provenance(self, tag: str) -> "Dataset":
        return Dataset(self.task, self.features, self.labels,
                       np.full(self.n, tag, dtype="U8"))


def concat(a: Dataset, b: Dataset) -> Dataset:
    if a.task != b.task or a.dim != b.dim:
        raise ValueError("datasets disagree on task or dimension")
    return Dataset(a.task,
                   np.vstack([a.features, b.features]),
                   np.concatenate([a.labels, b.labels]),
                   np.concatenate([a.provenance, b.provenance]))


def empty_like(ds: Dataset) -> Dataset:
    return Dataset(ds.task, np.empty((0, ds.dim)),
                   np.empty(0, dtype=ds.labels.dtype), np.empty(0, dtype="U8"))


@dataclass(frozen=True)
class BlobsConfig:
    """Gaussian blobs, class means on a circle of radius `separation`."""
    n_classes: int
    separation: float
    noise_std: float
    dim: int = 2
    n: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2 or self.dim < 2:
            raise ValueError("blobs need n_classes >= 2 and dim >= 2")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @property
    def task(self) -> Task:
        return ClassificationTask(self.n_classes)


@dataclass(frozen=True)
class RingConfig:
    """Spiral curve: label y ~ U[0,1], point at angle 2*pi*y and radius
    radius_base + radius_slope * y, plus isotropic Gaussian noise.

    The slope keeps y=0 and y=1 apart in radius, so the noiseless map from
    features back to the label is invertible (angle determines y).
    """
    radius_base: float = 2.0
    radius_slope: float = 1.5
    noise_std: float = 0.1
    label_lo: float = 0.0
    label_hi: float = 1.0
    n: int = 0
    seed: int = 0
    dim: int = 2

    def __post_init__(self):
        if self.dim != 2:
            raise ValueError("ring family is 2-dimensional")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @property
    def task(self) -> Task:
        return RegressionTask(self.label_lo, self.label_hi)


SynthConfig = Union[BlobsConfig, RingConfig]


def blob_centers(cfg: BlobsConfig) -> np.ndarray:
    """(C, dim) class means on a circle in the first two coordinates."""
    angles = 2.0 * np.pi * np.arange(cfg.n_classes) / cfg.n_classes
    mu = np.zeros((cfg.n_classes, cfg.dim))
    mu[:, 0] = cfg.separation * np.cos(angles)
    mu[:, 1] = cfg.separation * np.sin(angles)
    return mu


def blob_features(cfg: BlobsConfig, classes: np.ndarray, key: int,
                  counters: np.ndarray) -> np.ndarray:
    """Class-conditional blob draws, pure in (key, counter)."""
    n = len(classes)
    lanes = counters[:, None] * np.uint64(64) + np.arange(cfg.dim, dtype=np.uint64)
    noise = rng.normals(key, lanes)
    return blob_centers(cfg)[classes] + cfg.noise_std * noise


def make_classification(cfg: BlobsConfig) -> Dataset:
    if cfg.n <= 0:
        raise ValueError("n must be positive")
    counts = np.full(cfg.n_classes, cfg.n // cfg.n_classes)
    counts[: cfg.n % cfg.n_classes] += 1
    labels = np.repeat(np.arange(cfg.n_classes), counts)
    key = rng.derive_key("blobs", cfg.seed)
    feats = blob_features(cfg, labels, key, np.arange(cfg.n, dtype=np.uint64))
    prov = np.full(cfg.n, "real", dtype="U8")
    return Dataset(cfg.task, feats, labels, prov)


def ring_point(cfg: RingConfig, y: np.ndarray) -> np.ndarray:
    angle = 2.0 * np.pi * y
    radius = cfg.radius_base + cfg.radius_slope * y
    return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)


def ring_features(cfg: RingConfig, y: np.ndarray, key: int,
                  counters: np.ndarray) -> np.ndarray:
    lanes = counters[:, None] * np.uint64(64) + np.arange(2, dtype=np.uint64)
    noise = rng.normals(key, lanes)
    return ring_point(cfg, y) + cfg.noise_std * noise


def ring_true_label(features: np.ndarray) -> np.ndarray:
    """Invert the noiseless ring map: label from the point's angle."""
    angle = np.arctan2(features[..., 1], features[..., 0])
    return np.mod(angle / (2.0 * np.pi), 1.0)


def make_regression(cfg: RingConfig) -> Dataset:
    if cfg.n <= 0:
        raise ValueError("n must be positive")
    key_y = rng.derive_key("ring-labels", cfg.seed)
    key_x = rng.derive_key("ring-feats", cfg.seed)
    y = rng.uniforms(key_y, np.arange(cfg.n, dtype=np.uint64))
    feats = ring_features(cfg, y, key_x, np.arange(cfg.n, dtype=np.uint64))
    prov = np.full(cfg.n, "real", dtype="U8")
    return Dataset(cfg.task, feats, y, prov)


def make_dataset(cfg: SynthConfig) -> Dataset:
    if isinstance(cfg, BlobsConfig):
        return make_classification(cfg)
    return make_regression(cfg)


def split(dataset: Dataset, train_fraction: float, seed: int):
    """Disjoint (train, test) partition; stratified per class for classification."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    if dataset.task.kind == "classification":
        train_idx, test_idx = [], []
        for c in range(dataset.task.n_classes):
            idx = np.flatnonzero(dataset.labels == c)
            if len(idx) < 2:
                raise ValueError(f"class {c} has fewer than 2 samples")
            g = rng.generator(rng.derive_key("split", seed, c))
            idx = idx[g.permutation(len(idx))]
            k = int(round(train_fraction * len(idx)))
            k = min(max(k, 1), len(idx) - 1)
            train_idx.append(idx[:k])
            test_idx.append(idx[k:])
        train_idx = np.sort(np.concatenate(train_idx))
        test_idx = np.sort(np.concatenate(test_idx))
    else:
        g = rng.generator(rng.derive_key("split", seed))
        idx = g.permutation(dataset.n)
        k = int(round(train_fraction * dataset.n))
        k = min(max(k, 1), dataset.n - 1)
        train_idx = np.sort(idx[:k])
        test_idx = np.sort(idx[k:])
    return dataset.subset(train_idx), dataset.subset(test_idx)


def _task_line(task: Task) -> str:
    if task.kind == "classification":
        return f"task=classification C={task.n_classes}"
    return f"task=regression lo={task.label_lo!r} hi={task.label_hi!r}"


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "w") as f:
        f.write(FORMAT_HEADER + "\n")
        f.write(_task_line(dataset.task) + "\n")
        f.write(f"dim={dataset.dim}\n")
        for i in range(dataset.n):
            if dataset.task.kind == "classification":
                lab = str(int(dataset.labels[i]))
            else:
                lab = repr(float(dataset.labels[i]))
            row = [lab, str(dataset.provenance[i])]
            row += [repr(float(v)) for v in dataset.features[i]]
            f.write(",".join(row) + "\n")


def read_dataset(path) -> Dataset:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if len(lines) < 3 or lines[0] != FORMAT_HEADER:
        raise ValueError("malformed dataset header")
    task = _parse_task_line(lines[1])
    if not lines[2].startswith("dim="):
        raise ValueError("malformed dim line")
    dim = int(lines[2][4:])
    feats, labels, prov = [], [], []
    for ln in lines[3:]:
        if not ln:
            continue
        parts = ln.split(",")
        if len(parts) != 2 + dim:
            raise ValueError(f"row arity mismatch: expected {2 + dim} fields")
        if task.kind == "classification":
            lab = int(parts[0])
            if not 0 <= lab < task.n_classes:
                raise ValueError(f"class label {lab} out of range")
        else:
            lab = float(parts[0])
            if not 0.0 <= lab <= 1.0:
                raise ValueError(f"regression label {lab} outside [0, 1]")
        labels.append(lab)
        prov.append(parts[1])
        feats.append([float(v) for v in parts[2:]])
    feats = np.asarray(feats, dtype=np.float64).reshape(len(labels), dim)
    return Dataset(task, feats, np.asarray(labels), np.asarray(prov, dtype="U8"))


def _parse_task_line(line: str) -> Task:
    parts = line.split()
    kv = dict(p.split("=", 1) for p in parts if "=" in p)
    if kv.get("task") == "classification" and "C" in kv:
        return ClassificationTask(int(kv["C"]))
    if kv.get("task") == "regression" and "lo" in kv and "hi" in kv:
        return RegressionTask(float(kv["lo"]), float(kv["hi"]))
    raise ValueError("malformed task line")
