"""Dense feed-forward networks with exact backpropagation.

Everything is float64 so that analytic gradients can be checked against
finite differences. Parameters are plain numpy arrays; two layers that hold
the same arrays share parameters (this is how fine-tuned detectors alias
the IDS they were built from), and all optimizer updates are in place.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DataError,
    NumericDivergenceError,
    ShapeError,
)
from . import metrics as _metrics

ACTIVATIONS = ("relu", "softmax", "sigmoid", "linear")
HEAD_ACTIVATIONS = ("softmax", "sigmoid")
LOSSES = ("categorical_cross_entropy", "binary_cross_entropy", "squared_error")


@dataclass(eq=False)
class DenseLayer:
    weights: np.ndarray  # (fan_in, fan_out)
    biases: np.ndarray  # (fan_out,)
    activation: str = "relu"
    trainable: bool = True

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise ConfigurationError("weights must be 2-D and biases 1-D")
        if self.weights.shape[1] != self.biases.shape[0]:
            raise ConfigurationError(
                f"bias length {self.biases.shape[0]} != fan_out {self.weights.shape[1]}"
            )

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]

    def view(self, trainable: bool | None = None) -> "DenseLayer":
        """A new layer object backed by the same parameter arrays."""
        return DenseLayer(
            self.weights, self.biases, self.activation,
            self.trainable if trainable is None else trainable,
        )

    def copy(self, trainable: bool | None = None) -> "DenseLayer":
        return DenseLayer(
            self.weights.copy(), self.biases.copy(), self.activation,
            self.trainable if trainable is None else trainable,
        )


@dataclass(eq=False)
class Network:
    layers: list[DenseLayer]
    seed: int | None = None

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("a network needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.fan_out != b.fan_in:
                raise ConfigurationError(
                    f"layer {i} fan_out {a.fan_out} != layer {i + 1} fan_in {b.fan_in}"
                )
        for layer in self.layers[:-1]:
            if layer.activation in HEAD_ACTIVATIONS:
                raise ConfigurationError(f"{layer.activation} is only allowed as the final layer")

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [layer.fan_out for layer in self.layers]

    @property
    def head(self) -> str:
        return self.layers[-1].activation

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def copy(self) -> "Network":
        return Network([layer.copy() for layer in self.layers], self.seed)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.dims, [lyr.activation for lyr in self.layers]]).encode())
        for p in self.parameters():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()


def init_network(layer_dims: Sequence[int], activations: Sequence[str], seed: int) -> Network:
    """He-uniform weights, zero biases, drawn from numpy's PCG64 generator.

    Weights of layer i are U(-sqrt(6 / fan_in), sqrt(6 / fan_in)), sampled
    layer by layer from ``np.random.Generator(np.random.PCG64(seed))``.
    """
    layer_dims = [int(d) for d in layer_dims]
    if len(layer_dims) < 2:
        raise ConfigurationError("layer_dims needs at least an input and an output size")
    if len(activations) != len(layer_dims) - 1:
        raise ConfigurationError(
            f"{len(activations)} activations for {len(layer_dims) - 1} layers"
        )
    if any(d <= 0 for d in layer_dims):
        raise ConfigurationError("layer sizes must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    for fan_in, fan_out, act in zip(layer_dims, layer_dims[1:], activations):
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return Network(layers, seed)


# ---------------------------------------------------------------- forward ---

def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "linear":
        return z
    if kind == "sigmoid":
        # split by sign to avoid overflow in exp
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _as_batch(net: Network, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"expected input width {net.input_dim}, got shape {np.shape(batch)}")
    return x


@dataclass
class _Trace:
    inputs: list[np.ndarray]  # input to each layer
    preacts: list[np.ndarray]
    acts: list[np.ndarray]


def _trace(net: Network, x: np.ndarray) -> _Trace:
    inputs, preacts, acts = [], [], []
    a = x
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weights + layer.biases
        a = _activate(z, layer.activation)
        preacts.append(z)
        acts.append(a)
    return _Trace(inputs, preacts, acts)


def forward(net: Network, batch) -> list[np.ndarray]:
    """Activations of every layer for ``batch``; the last entry is the output."""
    return _trace(net, _as_batch(net, batch)).acts


def predict_proba(net: Network, batch) -> np.ndarray:
    return forward(net, batch)[-1]


def logits(net: Network, batch) -> np.ndarray:
    """Pre-activation of the final layer."""
    x = _as_batch(net, batch)
    for layer in net.layers[:-1]:
        x = _activate(x @ layer.weights + layer.biases, layer.activation)
    last = net.layers[-1]
    return x @ last.weights + last.biases


def predict_labels(net: Network, batch) -> np.ndarray:
    out = predict_proba(net, batch)
    if net.head == "sigmoid" or out.shape[1] == 1:
        return (out[:, 0] >= 0.5).astype(np.int64)
    return np.argmax(out, axis=1)


# --------------------------------------------------------------- backward ---

def _check_loss(net: Network, loss: str) -> None:
    if loss not in LOSSES:
        raise ConfigurationError(f"unknown loss {loss!r}")
    if loss == "categorical_cross_entropy" and net.head != "softmax":
        raise ConfigurationError("categorical cross-entropy needs a softmax head")
    if loss == "binary_cross_entropy" and not (net.head == "sigmoid" and net.output_dim == 1):
        raise ConfigurationError("binary cross-entropy needs a single sigmoid unit")


def _targets(net: Network, loss: str, target, n: int) -> np.ndarray:
    t = np.asarray(target)
    if loss == "categorical_cross_entropy":
        t = np.broadcast_to(t, (n,)) if t.ndim == 0 else t.ravel()
        if not np.issubdtype(t.dtype, np.integer):
            if not np.all(np.mod(t, 1) == 0):
                raise ConfigurationError("categorical targets must be class indices")
            t = t.astype(np.int64)
        if t.shape[0] != n or np.any(t < 0) or np.any(t >= net.output_dim):
            raise ConfigurationError("class index target out of range or wrong length")
        return t
    t = t.astype(np.float64)
    if loss == "binary_cross_entropy":
        t = np.broadcast_to(t, (n,)) if t.ndim == 0 else t.ravel()
        if t.shape[0] != n:
            raise ConfigurationError("binary target length mismatch")
        return t.reshape(n, 1)
    if t.ndim <= 1 and net.output_dim == 1:
        return np.broadcast_to(t.reshape(-1, 1), (n, 1))
    return np.broadcast_to(t, (n, net.output_dim))


def _sample_losses(tr: _Trace, loss: str, t: np.ndarray) -> np.ndarray:
    z = tr.preacts[-1]
    if loss == "categorical_cross_entropy":
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        return lse - z[np.arange(z.shape[0]), t]
    if loss == "binary_cross_entropy":
        zz = z[:, 0]
        # softplus(z) - y z
        return np.logaddexp(0.0, zz) - t[:, 0] * zz
    return np.sum((tr.acts[-1] - t) ** 2, axis=1)


def _output_delta(net: Network, tr: _Trace, loss: str, t: np.ndarray) -> np.ndarray:
    """d(per-sample loss)/d(final pre-activation)."""
    out = tr.acts[-1]
    if loss == "categorical_cross_entropy":
        d = out.copy()
        d[np.arange(d.shape[0]), t] -= 1.0
        return d
    if loss == "binary_cross_entropy":
        return out - t
    return _act_backward(2.0 * (out - t), tr.preacts[-1], out, net.head)


def _act_backward(g: np.ndarray, z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return g * (z > 0)
    if kind == "linear":
        return g
    if kind == "sigmoid":
        return g * a * (1.0 - a)
    return a * (g - np.sum(g * a, axis=1, keepdims=True))


def _backprop(net: Network, tr: _Trace, delta: np.ndarray, want_params: bool = True):
    """Propagate d/d(final pre-activation) back through the stack.

    Returns (param_grads, input_grad); param_grads is a list of (dW, db)
    summed over the batch, or None when not requested.
    """
    grads = [] if want_params else None
    d = delta
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if want_params:
            grads.append((tr.inputs[i].T @ d, d.sum(axis=0)))
        g = d @ layer.weights.T
        if i > 0:
            prev = net.layers[i - 1]
            d = _act_backward(g, tr.preacts[i - 1], tr.acts[i - 1], prev.activation)
        else:
            d = g
    if want_params:
        grads.reverse()
    return grads, d


def loss_value(net: Network, batch, target, loss: str) -> np.ndarray:
    """Per-sample loss values."""
    _check_loss(net, loss)
    x = _as_batch(net, batch)
    tr = _trace(net, x)
    return _sample_losses(tr, loss, _targets(net, loss, target, x.shape[0]))


def grad_input(net: Network, x, loss_target, loss: str = "categorical_cross_entropy") -> np.ndarray:
    """Gradient of the loss with respect to the input.

    ``x`` may be a single vector or a batch; for a batch each row gets the
    gradient of its own sample loss.
    """
    _check_loss(net, loss)
    single = np.ndim(x) == 1
    xb = _as_batch(net, x)
    tr = _trace(net, xb)
    t = _targets(net, loss, loss_target, xb.shape[0])
    _, g = _backprop(net, tr, _output_delta(net, tr, loss, t), want_params=False)
    return g[0] if single else g


def grad_params(net: Network, batch, target, loss: str):
    """Mean loss over the batch and its gradients as a list of (dW, db)."""
    _check_loss(net, loss)
    x = _as_batch(net, batch)
    tr = _trace(net, x)
    t = _targets(net, loss, target, x.shape[0])
    n = x.shape[0]
    grads, _ = _backprop(net, tr, _output_delta(net, tr, loss, t) / n)
    return float(np.mean(_sample_losses(tr, loss, t))), grads


def logit_grad(net: Network, x, coeffs) -> tuple[np.ndarray, np.ndarray]:
    """Logits at ``x`` and the input gradient of sum_j coeffs[:, j] * logit_j.

    Used by the minimal-perturbation attacks, which work on the margin
    between two logits rather than on a training loss.
    """
    xb = _as_batch(net, x)
    tr = _trace(net, xb)
    c = np.broadcast_to(np.asarray(coeffs, dtype=np.float64), tr.preacts[-1].shape)
    _, g = _backprop(net, tr, np.array(c), want_params=False)
    return tr.preacts[-1], g


# --------------------------------------------------------------- training ---

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    eval_interval: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    loss: str = "categorical_cross_entropy"
    metric: str | None = None  # f1 | detection_rate | accuracy; None picks by loss
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs <= 0:
            raise ConfigurationError("epochs must be positive")
        if self.eval_interval <= 0 or self.epochs % self.eval_interval:
            raise ConfigurationError("eval_interval must divide epochs")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size <= 0:
            raise ConfigurationError("batch_size must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("categorical_cross_entropy", "binary_cross_entropy"):
            raise ConfigurationError(f"unsupported training loss {self.loss!r}")
        if self.metric not in (None, "f1", "detection_rate", "accuracy"):
            raise ConfigurationError(f"unknown metric {self.metric!r}")

    @property
    def selection_metric(self) -> str:
        if self.metric is not None:
            return self.metric
        return "f1" if self.loss == "categorical_cross_entropy" else "detection_rate"


@dataclass
class EvalRecord:
    epoch: int
    train_loss: float
    metric: float


@dataclass
class TrainHistory:
    metric: str
    records: list[EvalRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("-inf")

    def as_dicts(self) -> list[dict]:
        return [vars(r).copy() for r in self.records]


def _unpack(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        X, y = data
    else:
        X, y = data.X, data.y
    return np.asarray(X, dtype=np.float64), np.asarray(y)


def score(net: Network, X: np.ndarray, y: np.ndarray, metric: str) -> float:
    pred = predict_labels(net, X)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if metric == "f1":
            return _metrics.binary_metrics(y, pred).f1
        if metric == "detection_rate":
            return _metrics.detection_rate(y, pred)
    return _metrics.accuracy(y, pred)


def train(net: Network, train_data, eval_data, cfg: TrainConfig) -> tuple[Network, TrainHistory]:
    """Mini-batch training with periodic evaluation and best-checkpoint restore.

    ``train_data``/``eval_data`` are ``(X, y)`` tuples or objects with ``X``
    and ``y`` attributes. The network is updated in place (so parameters
    shared with another network are trained too) and, at the end, its
    trainable layers are reset to the best evaluated checkpoint. Layers with
    ``trainable=False`` are never written.
    """
    X, y = _unpack(train_data)
    Xe, ye = _unpack(eval_data)
    if X.shape[0] == 0 or Xe.shape[0] == 0:
        raise DataError("training and evaluation sets must be non-empty")
    if X.shape[1] != net.input_dim or Xe.shape[1] != net.input_dim:
        raise ShapeError(f"dataset width does not match network input {net.input_dim}")
    if y.shape[0] != X.shape[0]:
        raise DataError("label count does not match row count")
    _check_loss(net, cfg.loss)

    rng = np.random.default_rng(cfg.seed)
    layers = [layer for layer in net.layers if layer.trainable]
    idx = [i for i, layer in enumerate(net.layers) if layer.trainable]
    m = [(np.zeros_like(lyr.weights), np.zeros_like(lyr.biases)) for lyr in layers]
    v = [(np.zeros_like(lyr.weights), np.zeros_like(lyr.biases)) for lyr in layers]
    history = TrainHistory(cfg.selection_metric)
    best = [(lyr.weights.copy(), lyr.biases.copy()) for lyr in layers]
    step = 0
    n = X.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = grad_params(net, X[batch], y[batch], cfg.loss)
            if not np.isfinite(loss):
                raise NumericDivergenceError(epoch)
            total += loss * len(batch)
            if not layers:
                continue
            step += 1
            for k, (layer, i) in enumerate(zip(layers, idx)):
                gw, gb = grads[i]
                if cfg.optimizer == "sgd":
                    layer.weights -= cfg.learning_rate * gw
                    layer.biases -= cfg.learning_rate * gb
                    continue
                for j, (param, g) in enumerate(((layer.weights, gw), (layer.biases, gb))):
                    mj, vj = m[k][j], v[k][j]
                    mj *= cfg.beta1
                    mj += (1 - cfg.beta1) * g
                    vj *= cfg.beta2
                    vj += (1 - cfg.beta2) * g * g
                    mhat = mj / (1 - cfg.beta1 ** step)
                    vhat = vj / (1 - cfg.beta2 ** step)
                    param -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        if epoch % cfg.eval_interval == 0:
            value = score(net, Xe, ye, history.metric)
            history.records.append(EvalRecord(epoch, total / n, value))
            if value > history.best_metric:
                history.best_metric = value
                history.best_epoch = epoch
                best = [(lyr.weights.copy(), lyr.biases.copy()) for lyr in layers]
    for layer, (w, b) in zip(layers, best):
        layer.weights[...] = w
        layer.biases[...] = b
    return net, history


# ------------------------------------------------------------- checkpoint ---
#
# Layout (all integers little-endian):
#   8 bytes   magic b"ADVIDSNN"
#   4 bytes   uint32 header length H
#   H bytes   UTF-8 JSON header: format_version, byte_order, dtype,
#             layer_dims, activations, trainable, seed
#   then per layer: weights (fan_in x fan_out, row-major) and biases,
#   both little-endian float64.

MAGIC = b"ADVIDSNN"
FORMAT_VERSION = 1


def save_network(net: Network, path) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "byte_order": "little",
        "dtype": "float64",
        "layer_dims": net.dims,
        "activations": [layer.activation for layer in net.layers],
        "trainable": [layer.trainable for layer in net.layers],
        "seed": net.seed,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in net.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_network(path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise DataError(f"{path}: not a network checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    offset = 12 + hlen
    dims = header["layer_dims"]
    expected = offset + 8 * sum(a * b + b for a, b in zip(dims, dims[1:]))
    if expected != len(raw):
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    layers = []
    for fan_in, fan_out, act, tr in zip(dims, dims[1:], header["activations"], header["trainable"]):
        nw = fan_in * fan_out
        w = np.frombuffer(raw, dtype="<f8", count=nw, offset=offset).reshape(fan_in, fan_out)
        offset += 8 * nw
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        layers.append(DenseLayer(w.astype(np.float64), b.astype(np.float64), act, tr))
    return Network(layers, header.get("seed"))
