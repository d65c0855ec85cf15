"""Drop low-quality fake samples via density-ratio rejection sampling.

The conditional ratio p_real(x|y) / p_fake(x|y) is estimated with a binary
real-vs-fake classifier on (features ++ label encoding): the classifier's
odds, times the fake/real training prior, recover the ratio.  Rejection then
accepts a candidate with probability min(ratio / M_max, 1), where the ceiling
M_max is calibrated as gamma * max ratio over a batch of fresh fakes.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import cgen, modelio, nncore, rng
from .nncore import NetParams, NetSpec, TrainConfig
from .synthdata import ClassificationTask, Dataset

DRMODEL_HEADER = "cgankd-drmodel v1"

_LOGIT_CLIP = 30.0  # keeps exp() finite; equivalent to the probability floor
_COLLAPSE_RATE = 1e-4
_COLLAPSE_WINDOW = 200_000


@dataclass(frozen=True)
class SubsampleConfig:
    dr_train: TrainConfig
    n_target: int
    dr_hidden: tuple = (32,)
    n_fake_train: int = 0      # 0: match the real set's size
    calibration_size: int = 2000
    gamma: float = 1.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dr_hidden", tuple(self.dr_hidden))
        if self.n_target <= 0:
            raise ValueError("n_target must be positive")
        if self.gamma < 1.0:
            raise ValueError("gamma must be >= 1")


@dataclass
class DensityRatioModel:
    net: NetParams            # logits(2) head: class 1 = real, class 0 = fake
    prior_correction: float   # n_fake_train / n_real_train
    m_max: float
    task: object

    def __post_init__(self):
        if self.m_max <= 0.0:
            raise ValueError("m_max must be positive")


def _dr_inputs(task, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return np.hstack([features, cgen.label_encoding(task, labels)])


def train_dr(real: Dataset, fake: Dataset, config: SubsampleConfig,
             calibration: Dataset = None) -> DensityRatioModel:
    """Fit the real-vs-fake classifier and calibrate the rejection ceiling.

    `calibration` should be a batch of fresh fakes; it defaults to the fake
    training set itself.
    """
    if real.n == 0 or fake.n == 0:
        raise ValueError("real and fake sets must be non-empty")
    if real.task != fake.task or real.dim != fake.dim:
        raise ValueError("real and fake sets disagree on task or dimension")
    task = real.task
    X = np.vstack([_dr_inputs(task, real.features, real.labels),
                   _dr_inputs(task, fake.features, fake.labels)])
    y = np.concatenate([np.ones(real.n, dtype=np.int64),
                        np.zeros(fake.n, dtype=np.int64)])
    prov = np.full(len(y), "real", dtype="U8")
    dr_set = Dataset(ClassificationTask(2), X, y, prov)
    spec = NetSpec(X.shape[1], config.dr_hidden, "logits", 2)
    params = nncore.init_params(spec, rng.derive_key("dr-init", config.seed))
    net, _ = nncore.train(params, dr_set, config.dr_train)
    model = DensityRatioModel(net, fake.n / real.n, m_max=1.0, task=task)
    calib = calibration if calibration is not None else fake
    ratios = ratio_batch(model, calib.features, calib.labels)
    model.m_max = config.gamma * float(ratios.max())
    return model


def ratio_batch(model: DensityRatioModel, features: np.ndarray,
                labels: np.ndarray) -> np.ndarray:
    """Nonnegative, finite estimates of p_real(x|y) / p_fake(x|y)."""
    logits = nncore.forward_batch(model.net,
                                  _dr_inputs(model.task, features, labels))
    odds_log = np.clip(logits[:, 1] - logits[:, 0], -_LOGIT_CLIP, _LOGIT_CLIP)
    return np.exp(odds_log) * model.prior_correction


def ratio(model: DensityRatioModel, sample) -> float:
    """Ratio estimate for a single (features, label) pair."""
    features, label = sample
    arr = np.asarray(features, dtype=np.float64)[None, :]
    return float(ratio_batch(model, arr, np.asarray([label]))[0])


def model_ratio_fn(model: DensityRatioModel):
    return lambda features, labels: ratio_batch(model, features, labels)


def constant_labels(label):
    def source(indices):
        return np.full(len(indices), label)
    return source


def empirical_labels(train_set: Dataset, seed: int):
    pool = np.sort(train_set.labels)
    key = rng.derive_key("reject-labels", seed)

    def source(indices):
        u = rng.uniforms(key, np.asarray(indices, dtype=np.uint64))
        return pool[np.minimum((u * len(pool)).astype(np.int64), len(pool) - 1)]
    return source


def rejection_sample(generator, ratio_fn, m_max: float, label_source,
                     n_target: int, seed: int, chunk: int = 4096) -> Dataset:
    """Accept-reject until n_target accepted; provenance fake_m1.

    `generator` is a GeneratorHandle or a callable (labels, indices) ->
    features; `ratio_fn` maps (features, labels) -> ratios (a trained model's
    estimate or an injected exact function); `label_source` maps stream
    indices -> labels.  The acceptance decision at stream position i is a
    pure function of (ratio_i, m_max, uniform draw i).
    """
    if n_target <= 0:
        raise ValueError("n_target must be positive")
    if m_max <= 0.0:
        raise ValueError("m_max must be positive")
    task = generator.task
    if isinstance(generator, CallableGenerator):
        sample_fn = generator.sample_features
    else:
        def sample_fn(labels, idx):
            return cgen.sample_features(generator, labels, seed, idx)
    accept_key = rng.derive_key("reject-accept", seed)
    feats_out, labels_out = [], []
    accepted = 0
    start = 0
    window_candidates = window_accepts = 0
    while accepted < n_target:
        idx = np.arange(start, start + chunk)
        start += chunk
        labels = np.asarray(label_source(idx))
        feats = sample_fn(labels, idx)
        r = np.asarray(ratio_fn(feats, labels), dtype=np.float64)
        p = np.minimum(r / m_max, 1.0)
        u = rng.uniforms(accept_key, idx.astype(np.uint64))
        keep = u < p
        feats_out.append(feats[keep])
        labels_out.append(labels[keep])
        accepted += int(keep.sum())
        window_candidates += chunk
        window_accepts += int(keep.sum())
        if window_candidates >= _COLLAPSE_WINDOW:
            if window_accepts / window_candidates < _COLLAPSE_RATE:
                raise RuntimeError(
                    "rejection sampling acceptance rate collapsed below "
                    f"{_COLLAPSE_RATE}; consider a larger gamma ceiling or a "
                    "better density-ratio model")
            window_candidates = window_accepts = 0
    feats = np.vstack(feats_out)[:n_target]
    labels = np.concatenate(labels_out)[:n_target]
    prov = np.full(n_target, "fake_m1", dtype="U8")
    return Dataset(task, feats, labels, prov)


class CallableGenerator:
    """Adapter giving a bare (labels, indices) -> features callable the
    GeneratorHandle surface; used to inject exact test generators."""

    def __init__(self, fn, task):
        self._fn = fn
        self.task = task

    def sample_features(self, labels, indices):
        return self._fn(labels, indices)


def save_dr_model(model: DensityRatioModel, path) -> None:
    lines = [DRMODEL_HEADER,
             f"prior_correction={model.prior_correction!r}",
             f"m_max={model.m_max!r}"]
    if model.task.kind == "classification":
        lines.append(f"task=classification C={model.task.n_classes}")
    else:
        lines.append(f"task=regression lo={model.task.label_lo!r} "
                     f"hi={model.task.label_hi!r}")
    lines.extend(modelio.netparams_lines(model.net))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dr_model(path) -> DensityRatioModel:
    from .synthdata import _parse_task_line
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines or lines[0] != DRMODEL_HEADER:
        raise ValueError("malformed density-ratio model header")
    kv = dict(ln.partition("=")[::2] for ln in lines[1:4])
    task = _parse_task_line(next(ln for ln in lines if ln.startswith("task=")))
    start = lines.index(modelio.MODEL_HEADER)
    net = modelio.netparams_from_lines(lines[start:])
    return DensityRatioModel(net, float(kv["prior_correction"]),
                             float(kv["m_max"]), task)
