"""Minimal feedforward-network machinery.

ReLU hidden layers; output heads: "logits" (C >= 2 classification scores),
"nonneg_scalar" (ReLU-ed scalar, predictions >= 0), and "linear" (raw vector,
used internally by the GAN generator and single-logit heads).  Losses:
plain cross entropy, squared error, and the blended hard/soft distillation
loss  L = (1 - lam) * CE(y, p_s) + lam * CE(p_t, p_s)  with both soft-label
sides computed at the same temperature.

Softmax probabilities are floored at PROB_FLOOR before any log so the loss
stays bounded; the analytic gradients account for the floor exactly.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .synthdata import Dataset

PROB_FLOOR = 1e-12

OUTPUT_KINDS = ("logits", "nonneg_scalar", "linear")
LOSS_KINDS = ("plain_ce", "plain_se", "blkd")


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden_widths: tuple
    output_kind: str
    n_outputs: int = 1  # C for logits; width for linear; must be 1 for scalar

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not self.hidden_widths or any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden_widths must be non-empty and positive")
        if self.output_kind not in OUTPUT_KINDS:
            raise ValueError(f"unknown output kind {self.output_kind!r}")
        if self.output_kind == "logits" and self.n_outputs < 2:
            raise ValueError("logits head needs n_outputs >= 2")
        if self.output_kind == "nonneg_scalar" and self.n_outputs != 1:
            raise ValueError("nonneg_scalar head has a single output")
        if self.output_kind == "linear" and self.n_outputs < 1:
            raise ValueError("linear head needs n_outputs >= 1")

    @property
    def layer_dims(self):
        return (self.input_dim,) + self.hidden_widths + (self.n_outputs,)


@dataclass
class NetParams:
    spec: NetSpec
    weights: list  # per layer, shape (out, in)
    biases: list   # per layer, shape (out,)

    def __post_init__(self):
        dims = self.spec.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("layer count mismatch")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
                raise ValueError(f"shape mismatch at layer {l}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite parameters")

    def copy(self) -> "NetParams":
        return NetParams(self.spec, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])


@dataclass(frozen=True)
class SoftLabel:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or np.any(p <= 0.0) or np.any(p > 1.0):
            raise ValueError("soft label entries must lie in (0, 1]")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("soft label must sum to 1")


@dataclass(frozen=True)
class Loss:
    kind: str
    lam: float = 0.5        # blkd mixing weight, in [0, 1]
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float
    lr_decay_epochs: tuple = ()
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    loss: Loss = Loss("plain_ce")

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(self.lr_decay_epochs))
        if self.lr <= 0.0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epochs/batch_size")


@dataclass(frozen=True)
class Metrics:
    n: int
    top1: float = None
    mae: float = None

    @property
    def primary(self) -> float:
        return self.top1 if self.top1 is not None else self.mae


def init_params(spec: NetSpec, seed: int) -> NetParams:
    """Scaled-uniform weights (scale 1/sqrt(fan_in)), zero biases.

    The nonnegative scalar head starts its output bias at 0.5 (the midpoint
    of the unit label range): with a zero bias the clamped output unit is
    inactive on every input for roughly half of all seeds, and an inactive
    clamp passes no gradient, so such networks would never train.
    """
    g = rng.generator(rng.derive_key("init", seed))
    dims = spec.layer_dims
    weights, biases = [], []
    for l in range(len(dims) - 1):
        scale = 1.0 / math.sqrt(dims[l])
        weights.append(g.uniform(-scale, scale, size=(dims[l + 1], dims[l])))
        biases.append(np.zeros(dims[l + 1]))
    if spec.output_kind == "nonneg_scalar":
        biases[-1][:] = 0.5
    return NetParams(spec, weights, biases)


def _forward_cache(params: NetParams, X: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    pre, acts = [], [X]
    a = X
    n_layers = len(params.weights)
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        pre.append(z)
        if l < n_layers - 1:
            a = np.maximum(z, 0.0)
        elif params.spec.output_kind == "nonneg_scalar":
            a = np.maximum(z, 0.0)
        else:
            a = z
        acts.append(a)
    return acts[-1], (pre, acts)


def forward_batch(params: NetParams, X: np.ndarray) -> np.ndarray:
    """Network outputs for a batch, shape (n, n_outputs)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.spec.input_dim:
        raise ValueError("input dimension mismatch")
    out, _ = _forward_cache(params, X)
    return out


def forward(params: NetParams, features):
    """Single-sample forward: logits vector, or a nonnegative float."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (params.spec.input_dim,):
        raise ValueError("input dimension mismatch")
    out = forward_batch(params, x[None, :])[0]
    if params.spec.output_kind == "nonneg_scalar":
        return float(out[0])
    return out


def backward(params: NetParams, cache, d_out: np.ndarray):
    """Backprop a gradient w.r.t. the network output.

    Returns (weight grads, bias grads, gradient w.r.t. the input batch).
    """
    pre, acts = cache
    n_layers = len(params.weights)
    delta = d_out
    if params.spec.output_kind == "nonneg_scalar":
        delta = delta * (pre[-1] > 0.0)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        delta = delta @ params.weights[l]
        if l > 0:
            delta = delta * (pre[l - 1] > 0.0)
    return gw, gb, delta


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise temperature softmax with max-subtraction."""
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def soft_labels(logits, temperature: float) -> SoftLabel:
    l = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(l)):
        raise ValueError("non-finite logits")
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    p = softmax(l, temperature)
    p = np.maximum(p, PROB_FLOOR)
    return SoftLabel(p / p.sum())


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] = 1.0
    return out


def _ce_rows(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row cross entropy  -sum_c t_c log max(p_c, floor)."""
    return -(targets * np.log(np.maximum(probs, PROB_FLOOR))).sum(axis=-1)


def loss_value(loss: Loss, prediction, target, teacher_soft: SoftLabel = None) -> float:
    """Single-sample loss.

    For classification kinds `prediction` is the logits vector and `target`
    the one-hot label; for plain_se both are scalars.
    """
    if loss.kind == "plain_se":
        return float(prediction - target) ** 2
    logits = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    p = softmax(logits, loss.temperature)
    hard = float(_ce_rows(p[None, :], t[None, :])[0])
    if loss.kind == "plain_ce":
        return hard
    if teacher_soft is None:
        raise ValueError("blkd loss requires teacher_soft")
    soft = float(_ce_rows(p[None, :], teacher_soft.probs[None, :])[0])
    return (1.0 - loss.lam) * hard + loss.lam * soft


def _batch_loss_and_dout(params, out, targets, loss: Loss, teacher_probs=None):
    """Mean batch loss and its gradient w.r.t. the network output."""
    n = out.shape[0]
    if loss.kind == "plain_se":
        diff = out[:, 0] - targets
        value = float(np.mean(diff**2))
        d_out = np.zeros_like(out)
        d_out[:, 0] = 2.0 * diff / n
        return value, d_out
    T = loss.temperature
    p = softmax(out, T)
    if loss.kind == "plain_ce":
        t_eff = targets
    else:
        t_eff = (1.0 - loss.lam) * targets + loss.lam * teacher_probs
    value = float(np.mean(_ce_rows(p, t_eff)))
    # d/dp with the probability floor: clamped entries contribute nothing.
    active = p > PROB_FLOOR
    g = np.where(active, -t_eff / np.maximum(p, PROB_FLOOR), 0.0)
    d_out = p * (g - (p * g).sum(axis=-1, keepdims=True)) / (T * n)
    return value, d_out


def _teacher_probs(teacher: NetParams, X: np.ndarray, temperature: float) -> np.ndarray:
    logits = forward_batch(teacher, X)
    return softmax(logits, temperature)


def _prepare_targets(dataset: Dataset, spec: NetSpec, loss: Loss):
    if loss.kind == "plain_se":
        if spec.output_kind != "nonneg_scalar" or dataset.task.kind != "regression":
            raise ValueError("plain_se needs a scalar head and regression data")
        return dataset.labels.astype(np.float64)
    if spec.output_kind != "logits" or dataset.task.kind != "classification":
        raise ValueError("cross-entropy losses need a logits head and class data")
    return one_hot(dataset.labels, spec.n_outputs)


def gradients(params: NetParams, batch, loss: Loss, teacher: NetParams = None) -> NetParams:
    """Exact analytic gradients of the mean batch loss, shaped like the params.

    `batch` is (X, targets): one-hot rows for classification, scalars for
    regression.
    """
    X, targets = batch
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    teacher_probs = None
    if loss.kind == "blkd":
        if teacher is None:
            raise ValueError("blkd loss requires a teacher")
        teacher_probs = _teacher_probs(teacher, X, loss.temperature)
    out, cache = _forward_cache(params, X)
    _, d_out = _batch_loss_and_dout(params, out, targets, loss, teacher_probs)
    gw, gb, _ = backward(params, cache, d_out)
    return NetParams(params.spec, gw, gb)


class SgdState:
    """SGD with momentum and decoupled L2 weight decay."""

    def __init__(self, params: NetParams, momentum: float, weight_decay: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.vw = [np.zeros_like(w) for w in params.weights]
        self.vb = [np.zeros_like(b) for b in params.biases]

    def step(self, gw, gb, lr: float):
        for l in range(len(self.params.weights)):
            self.vw[l] = self.momentum * self.vw[l] + gw[l] \
                + self.weight_decay * self.params.weights[l]
            self.vb[l] = self.momentum * self.vb[l] + gb[l]
            self.params.weights[l] -= lr * self.vw[l]
            self.params.biases[l] -= lr * self.vb[l]


def train(params: NetParams, dataset: Dataset, config: TrainConfig,
          teacher: NetParams = None):
    """SGD training; deterministic per config.seed.

    Returns (trained params, per-epoch mean-loss history).  The teacher's
    soft labels (blkd mode) are computed once on every training sample.
    """
    if dataset.n == 0:
        raise ValueError("empty dataset")
    loss = config.loss
    if (teacher is not None) != (loss.kind == "blkd"):
        raise ValueError("teacher is required exactly for blkd loss")
    targets = _prepare_targets(dataset, params.spec, loss)
    X = dataset.features
    teacher_probs = None
    if loss.kind == "blkd":
        teacher_probs = _teacher_probs(teacher, X, loss.temperature)

    state = SgdState(params.copy(), config.momentum, config.weight_decay)
    lr = config.lr
    history = []
    for epoch in range(config.epochs):
        if epoch in config.lr_decay_epochs:
            lr *= config.lr_decay_factor
        g = rng.generator(rng.derive_key("shuffle", config.seed, epoch))
        order = g.permutation(dataset.n)
        total = 0.0
        for start in range(0, dataset.n, config.batch_size):
            idx = order[start:start + config.batch_size]
            tp = teacher_probs[idx] if teacher_probs is not None else None
            out, cache = _forward_cache(state.params, X[idx])
            value, d_out = _batch_loss_and_dout(state.params, out, targets[idx],
                                                loss, tp)
            gw, gb, _ = backward(state.params, cache, d_out)
            state.step(gw, gb, lr)
            total += value * len(idx)
        history.append(total / dataset.n)
    return state.params, history


def evaluate(params: NetParams, dataset: Dataset) -> Metrics:
    """Top-1 accuracy, or MAE in original (unnormalized) label units."""
    if dataset.n == 0:
        raise ValueError("empty dataset")
    out = forward_batch(params, dataset.features)
    if dataset.task.kind == "classification":
        if params.spec.output_kind != "logits":
            raise ValueError("task/head mismatch")
        top1 = float(np.mean(out.argmax(axis=1) == dataset.labels))
        return Metrics(n=dataset.n, top1=top1)
    if params.spec.output_kind != "nonneg_scalar":
        raise ValueError("task/head mismatch")
    scale = dataset.task.label_hi - dataset.task.label_lo
    mae = float(np.mean(np.abs(out[:, 0] - dataset.labels)) * scale)
    return Metrics(n=dataset.n, mae=mae)
