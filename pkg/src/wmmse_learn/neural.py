"""Fully connected ReLU network trained with RMSprop, written on numpy.

Weights are stored as ``(fan_in, fan_out)`` matrices and a layer computes
``x @ W + b``. The output layer is clamped to ``[0, p_max]`` unless the
model is built with ``output_activation="linear"``.
"""
from __future__ import annotations

import copy
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

TRUNCATION = 2.0
MAGIC = b"WMMSEMLP"
VERSION = 1
_ACTIVATIONS = ("clamp", "linear")


@dataclass
class MlpModel:
    layer_sizes: list
    weights: list
    biases: list
    p_max: float = 1.0
    output_activation: str = "clamp"
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("parameter count does not match layer_sizes")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if W.shape != shape or b.shape != shape[1:]:
                raise ValueError(f"layer {i}: expected {shape}, got {W.shape} / {b.shape}")
        if self.output_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def params(self) -> list:
        return self.weights + self.biases

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    rms_decay: float = 0.9
    batch_size: int = 1000
    epsilon: float = 1e-8
    max_epochs: int = 100
    patience: int = 3
    max_halvings: int = 5
    seed: int = 0
    dtype: str = "float64"
    standardize: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.rms_decay < 1:
            raise ValueError("rms_decay must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class OptimizerState:
    running_sq_grad: list

    @classmethod
    def zeros_like(cls, params) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params])


def truncated_normal(rng, shape, bound=TRUNCATION) -> np.ndarray:
    """Standard normal draws, redrawing any with ``|z| > bound``."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(bad.sum())
        bad = np.abs(out) > bound
    return out


def init_model(layer_sizes, seed=0, p_max=1.0, output_activation="clamp") -> MlpModel:
    """Truncated-normal weights scaled by ``1/sqrt(fan_in)``, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights = [truncated_normal(rng, (a, b)) / np.sqrt(a) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return MlpModel(sizes, weights, biases, float(p_max), output_activation)


def _prepare(model, X):
    X = np.asarray(X)
    squeeze = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"expected {model.layer_sizes[0]} input features, got {X.shape[1]}")
    if model.input_mean is not None:
        X = (X - model.input_mean) / model.input_std
    return X, squeeze


def _output(model, z):
    if model.output_activation == "linear":
        return z
    return np.minimum(np.maximum(z, 0.0), model.p_max)


def forward(model: MlpModel, X) -> np.ndarray:
    """Network output for one input vector or a batch of rows."""
    a, squeeze = _prepare(model, X)
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        a = _output(model, z) if i == last else np.maximum(z, 0.0)
    return a[0] if squeeze else a


def mse_loss(pred, label) -> float:
    pred, label = np.asarray(pred), np.asarray(label)
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {label.shape}")
    return float(np.mean(np.square(pred - label)))


def backward(model: MlpModel, X, Y):
    """Loss and gradients of the batch MSE.

    Returns ``(loss, grad_weights, grad_biases)``. The ReLU kink and both
    clamp boundaries get subgradient 0.
    """
    X, _ = _prepare(model, X)
    Y = np.atleast_2d(np.asarray(Y, dtype=X.dtype))
    if len(X) == 0:
        raise ValueError("empty batch")
    acts, pre = [X], []
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ W + b
        pre.append(z)
        acts.append(_output(model, z) if i == last else np.maximum(z, 0.0))
    out = acts[-1]
    if out.shape != Y.shape:
        raise ValueError(f"label shape {Y.shape} does not match output {out.shape}")
    diff = out - Y
    loss = float(np.mean(np.square(diff)))

    delta = 2.0 * diff / diff.size
    if model.output_activation == "clamp":
        z = pre[-1]
        delta = delta * ((z > 0) & (z < model.p_max))
    gW = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(last, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0)
    return loss, gW, gb


def rmsprop_step(params, grads, state: OptimizerState, learning_rate=1e-3, decay=0.9, epsilon=1e-8):
    """In-place RMSprop update; returns ``(params, state)``."""
    for p, g, r in zip(params, grads, state.running_sq_grad):
        if p.shape != g.shape or r.shape != p.shape:
            raise ValueError("parameter, gradient and state shapes differ")
        r *= decay
        r += (1.0 - decay) * np.square(g)
        p -= learning_rate * g / np.sqrt(r + epsilon)
    return params, state


def binarize(pred, p_max=1.0) -> np.ndarray:
    """Round to ``p_max`` strictly above ``p_max / 2``, otherwise to 0."""
    pred = np.asarray(pred, dtype=np.float64)
    return np.where(pred > 0.5 * p_max, p_max, 0.0)


def evaluate_mse(model, X, Y, chunk=10000) -> float:
    total = 0.0
    for s in range(0, len(X), chunk):
        total += np.sum(np.square(forward(model, X[s:s + chunk]) - Y[s:s + chunk]))
    return float(total / np.asarray(Y).size)


def train(model: MlpModel, train_set, valid_set, cfg: TrainConfig | None = None, callback=None):
    """Mini-batch RMSprop with plateau halving and best-validation snapshot.

    ``train_set`` and ``valid_set`` are ``(X, Y)`` pairs. The learning rate
    halves after ``patience`` epochs without validation improvement and
    training stops once it has been halved ``max_halvings`` times or after
    ``max_epochs``. Returns ``(best_model, history)``.
    """
    cfg = cfg or TrainConfig()
    Xtr, Ytr = (np.asarray(a, dtype=cfg.dtype) for a in train_set)
    Xva, Yva = (np.asarray(a, dtype=cfg.dtype) for a in valid_set)
    if len(Xtr) == 0 or len(Xva) == 0:
        raise ValueError("training and validation sets must be non-empty")
    Ytr, Yva = Ytr.reshape(len(Ytr), -1), Yva.reshape(len(Yva), -1)
    if Ytr.shape[1] != model.layer_sizes[-1] or Yva.shape[1] != Ytr.shape[1]:
        raise ValueError("label width does not match the output layer")

    model = model.copy()
    model.weights = [W.astype(cfg.dtype) for W in model.weights]
    model.biases = [b.astype(cfg.dtype) for b in model.biases]
    if cfg.standardize:
        model.input_mean = Xtr.mean(axis=0)
        model.input_std = np.where(Xtr.std(axis=0) > 0, Xtr.std(axis=0), 1.0)

    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState.zeros_like(model.params)
    lr = cfg.learning_rate
    best_model, best_val = model.copy(), evaluate_mse(model, Xva, Yva)
    history = []
    wait = halvings = 0
    n = len(Xtr)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        running = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, gW, gb = backward(model, Xtr[idx], Ytr[idx])
            rmsprop_step(model.params, gW + gb, state, lr, cfg.rms_decay, cfg.epsilon)
            running += loss * len(idx)
        val = evaluate_mse(model, Xva, Yva)
        history.append({"epoch": epoch, "train_mse": running / n, "valid_mse": val, "learning_rate": lr})
        log.debug("epoch %d train %.5f valid %.5f lr %.2e", epoch, running / n, val, lr)
        if callback is not None:
            callback(history[-1])
        if val < best_val:
            best_val, best_model, wait = val, model.copy(), 0
        else:
            wait += 1
            if wait >= cfg.patience:
                lr, wait, halvings = lr / 2, 0, halvings + 1
                if halvings >= cfg.max_halvings:
                    break
    return best_model, history


def save_history(history, path):
    lines = ["epoch,train_mse,valid_mse,learning_rate"]
    lines += [f"{h['epoch']},{h['train_mse']!r},{h['valid_mse']!r},{h['learning_rate']!r}" for h in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- checkpoint format -------------------------------------------------------
# magic | u32 version | u32 n_sizes | u32 sizes... | f64 p_max | u8 activation
# | u8 has_standardization | per layer: W (row-major), b | [mean, std]
# all little-endian, floats as 64-bit.

def save_model(model: MlpModel, path):
    sizes = model.layer_sizes
    has_std = model.input_mean is not None
    parts = [
        MAGIC,
        struct.pack(f"<II{len(sizes)}I", VERSION, len(sizes), *sizes),
        struct.pack("<dBB", model.p_max, _ACTIVATIONS.index(model.output_activation), int(has_std)),
    ]
    for W, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    if has_std:
        parts.append(np.asarray(model.input_mean, dtype="<f8").tobytes())
        parts.append(np.asarray(model.input_std, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> MlpModel:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a model checkpoint")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<II", data, pos)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    sizes = list(struct.unpack_from(f"<{count}I", data, pos))
    pos += 4 * count
    p_max, act, has_std = struct.unpack_from("<dBB", data, pos)
    pos += 10

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
        return arr

    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(take((a, b)))
        biases.append(take((b,)))
    model = MlpModel(sizes, weights, biases, p_max, _ACTIVATIONS[act])
    if has_std:
        model.input_mean = take((sizes[0],))
        model.input_std = take((sizes[0],))
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return model
