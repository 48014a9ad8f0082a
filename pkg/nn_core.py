"""
Minimal dense network stack with analytic gradients.

Affine layers, ReLU, inverted dropout, softmax cross-entropy, Adam with weight
decay and an early-stopping loop. Everything is a value: steps return new
parameter objects instead of mutating the old ones.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import log_softmax
from scipy.special import softmax as _softmax

from errors import (
    CacheMismatch,
    ClassOutOfRange,
    ConfigError,
    EmptyBatcher,
    InvalidDims,
    ShapeMismatch,
    WidthMismatch,
)

RELU = "relu"
IDENTITY = "identity"


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = IDENTITY
    dropout: float = 0.0


@dataclass(frozen=True, eq=False)
class MlpParams:
    layers: Tuple[Layer, ...]

    @property
    def dims(self):
        return (self.layers[0].weight.shape[1],) + tuple(l.weight.shape[0] for l in self.layers)

    def arrays(self):
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def with_arrays(self, arrays):
        layers = tuple(
            replace(layer, weight=arrays[2 * i], bias=arrays[2 * i + 1])
            for i, layer in enumerate(self.layers)
        )
        return MlpParams(layers)

    def to_dict(self):
        return {
            "layers": [
                {"shape": list(l.weight.shape), "weight": l.weight.tolist(), "bias": l.bias.tolist(),
                 "activation": l.activation, "dropout": l.dropout}
                for l in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, data):
        layers = []
        for entry in data["layers"]:
            weight = np.asarray(entry["weight"], dtype=float).reshape(entry["shape"])
            layers.append(Layer(weight, np.asarray(entry["bias"], dtype=float),
                                entry["activation"], float(entry["dropout"])))
        return cls(tuple(layers))


def init_mlp(dims, dropout=0.0, seed=0):
    """Glorot-uniform weights, zero biases. Hidden layers are ReLU + dropout."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or min(dims) < 1:
        raise InvalidDims(f"need at least 2 positive layer widths, got {dims}")
    if not 0.0 <= dropout < 1.0:
        raise InvalidDims(f"dropout rate {dropout} outside [0, 1)")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        last = i == len(dims) - 2
        layers.append(Layer(
            weight=rng.uniform(-limit, limit, size=(fan_out, fan_in)),
            bias=np.zeros(fan_out),
            activation=IDENTITY if last else RELU,
            dropout=0.0 if last else float(dropout),
        ))
    return MlpParams(tuple(layers))


@dataclass(frozen=True, eq=False)
class ForwardCache:
    inputs: Tuple[np.ndarray, ...]
    pre: Tuple[np.ndarray, ...]
    masks: Tuple[Optional[np.ndarray], ...]
    shapes: Tuple[Tuple[int, int], ...]


def forward(params, batch, mode="eval", seed=0):
    """Logits plus the cache backward() needs. Train mode samples dropout masks from seed."""
    X = np.asarray(batch, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.dims[0]:
        raise WidthMismatch(f"batch width {X.shape[-1] if X.ndim else None} != input dim {params.dims[0]}")
    rng = np.random.default_rng(seed) if mode == "train" else None
    inputs, pre, masks = [], [], []
    h = X
    for layer in params.layers:
        inputs.append(h)
        a = h @ layer.weight.T + layer.bias
        pre.append(a)
        h = np.maximum(a, 0.0) if layer.activation == RELU else a
        mask = None
        if rng is not None and layer.dropout > 0:
            keep = 1.0 - layer.dropout
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        masks.append(mask)
    shapes = tuple(l.weight.shape for l in params.layers)
    return h, ForwardCache(tuple(inputs), tuple(pre), tuple(masks), shapes)


def backward(params, cache, grad_logits, return_input_grad=False):
    """Reverse-mode gradients through the affine/ReLU/dropout chain."""
    if cache.shapes != tuple(l.weight.shape for l in params.layers):
        raise CacheMismatch("cache was produced by a different network")
    g = np.asarray(grad_logits, dtype=float)
    if g.shape != cache.pre[-1].shape:
        raise CacheMismatch(f"upstream gradient shape {g.shape} != logits shape {cache.pre[-1].shape}")
    grads = []
    for layer, inp, a, mask in reversed(list(zip(params.layers, cache.inputs, cache.pre, cache.masks))):
        if mask is not None:
            g = g * mask
        if layer.activation == RELU:
            g = g * (a > 0)
        grads.append(replace(layer, weight=g.T @ inp, bias=g.sum(axis=0)))
        g = g @ layer.weight
    grads = MlpParams(tuple(reversed(grads)))
    if return_input_grad:
        return grads, g
    return grads


def softmax(logits):
    return _softmax(np.asarray(logits, dtype=float), axis=1)


def one_hot(indices, width):
    out = np.zeros((len(indices), width))
    out[np.arange(len(indices)), indices] = 1.0
    return out


def softmax_xent(logits, targets):
    """Mean cross-entropy and its gradient wrt logits.

    targets are class indices (1-D) or rows of a soft distribution (2-D).
    """
    logits = np.asarray(logits, dtype=float)
    n, width = logits.shape
    targets = np.asarray(targets)
    if targets.ndim == 1:
        if targets.size and (targets.min() < 0 or targets.max() >= width):
            raise ClassOutOfRange(f"target class outside 0..{width - 1}")
        targets = one_hot(targets.astype(np.int64), width)
    elif targets.shape != logits.shape:
        raise ClassOutOfRange(f"soft targets shape {targets.shape} != logits shape {logits.shape}")
    if n == 0:
        return 0.0, np.zeros_like(logits)
    log_p = log_softmax(logits, axis=1)
    loss = float(-(targets * log_p).sum() / n)
    grad = (np.exp(log_p) - targets) / n
    return loss, grad


# ============================================================================
# Optimisation
# ============================================================================

@dataclass(frozen=True, eq=False)
class AdamState:
    m: Tuple[np.ndarray, ...]
    v: Tuple[np.ndarray, ...]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    decoupled: bool = True


def new_adam(params, lr=1e-3, weight_decay=1e-5, decoupled=True, beta1=0.9, beta2=0.999, eps=1e-8):
    zeros = tuple(np.zeros_like(a) for a in params.arrays())
    return AdamState(m=zeros, v=zeros, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                     weight_decay=weight_decay, decoupled=decoupled)


def adam_step(state, params, grads):
    """One bias-corrected Adam update. Decoupled decay shrinks params before the step."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or len(p_arrays) != len(state.m) or any(
            p.shape != g.shape or p.shape != m.shape for p, g, m in zip(p_arrays, g_arrays, state.m)):
        raise ShapeMismatch("parameter, gradient and moment shapes disagree")

    t = state.step + 1
    lr, wd = state.lr, state.weight_decay
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        if wd and not state.decoupled:
            g = g + wd * p
        if wd and state.decoupled:
            p = p - lr * wd * p
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return replace(state, m=tuple(new_m), v=tuple(new_v), step=t), params.with_arrays(new_p)


@dataclass(frozen=True)
class TrainControl:
    max_epochs: int = 80
    patience: int = 8
    batch_size: int = 256
    seed: int = 0
    metric: str = "auroc"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ConfigError("patience must lie in 1..max_epochs")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    metric: float
    losses: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class TrainHistory:
    records: Tuple[EpochRecord, ...]
    best_epoch: int
    stopped_epoch: int


def train_with_early_stopping(params, batcher, control, val_eval, step):
    """Run epochs until `patience` non-improving epochs or max_epochs.

    batcher(epoch) yields batches; step(params, batch, epoch, index) returns
    (params, {loss name: value}); val_eval(params) is higher-is-better.
    Returns the parameters of the best epoch, not the last.
    """
    best_params, best_metric, best_epoch = params, -math.inf, 0
    records = []
    stale = 0
    epoch = 0
    for epoch in range(1, control.max_epochs + 1):
        sums, n_batches = {}, 0
        for index, batch in enumerate(batcher(epoch)):
            params, losses = step(params, batch, epoch, index)
            for name, value in losses.items():
                sums[name] = sums.get(name, 0.0) + value
            n_batches += 1
        if n_batches == 0:
            raise EmptyBatcher(f"batcher produced no batches in epoch {epoch}", epoch=epoch)

        metric = float(val_eval(params))
        records.append(EpochRecord(epoch, metric, {k: v / n_batches for k, v in sums.items()}))
        if best_epoch == 0 or metric > best_metric:
            best_params, best_metric, best_epoch = params, metric, epoch
            stale = 0
        else:
            stale += 1
        if stale >= control.patience:
            break
    return best_params, TrainHistory(tuple(records), best_epoch, epoch)
