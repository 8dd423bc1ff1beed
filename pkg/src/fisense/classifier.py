"""Feedforward softmax classifier with analytic per-class gradients.

The network is a stack of affine layers with elementwise activations; the
final layer is always Identity so its outputs are the logits fed to a
stabilized softmax. What distinguishes this implementation from a generic
MLP is that it exposes, for every class y at once, the gradient of
log P(y | x) with respect to the input and with respect to any flattened
parameter block. Those K-row gradient matrices are the raw material for the
perturbation-manifold machinery downstream.

Parameter flattening is fixed: per layer, weight matrix row-major, then
bias, layers concatenated first to last. All gradient code and the
serialization format rely on this order.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit


class Activation(Enum):
    SIGMOID = "sigmoid"
    RELU = "relu"
    IDENTITY = "identity"

    def apply(self, z):
        if self is Activation.SIGMOID:
            return expit(z)
        if self is Activation.RELU:
            return np.maximum(z, 0.0)
        return z

    def deriv(self, z):
        """Derivative evaluated at the pre-activation; ReLU kink fixed to 0."""
        if self is Activation.SIGMOID:
            s = expit(z)
            return s * (1.0 - s)
        if self is Activation.RELU:
            return (z > 0.0).astype(np.float64)
        return np.ones_like(z)


@dataclass
class Layer:
    weight: np.ndarray  # (fan_out, fan_in)
    bias: np.ndarray    # (fan_out,)
    activation: Activation

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("layer needs a 2-d weight and 1-d bias")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}"
            )
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")
        if not isinstance(self.activation, Activation):
            raise ValueError(f"unknown activation: {self.activation!r}")


@dataclass
class ClassifierModel:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ValueError(
                    f"layer chain mismatch: {prev.weight.shape} feeds {nxt.weight.shape}"
                )
        if self.layers[-1].activation is not Activation.IDENTITY:
            raise ValueError("final layer must have Identity activation (raw logits)")

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[1]

    @property
    def class_count(self):
        return self.layers[-1].weight.shape[0]

    def copy(self):
        return ClassifierModel(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


@dataclass
class LabeledDataset:
    images: np.ndarray            # (n, k0), values in [0, 1]
    labels: np.ndarray            # (n,), class indices from 0
    ids: np.ndarray = None        # stable per-sample identifiers
    image_shape: tuple = None     # (rows, cols) or (rows, cols, channels)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("images must be (n, k0), labels (n,)")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        if np.any(self.labels < 0):
            raise ValueError("labels must be non-negative class indices")
        if self.ids is None:
            self.ids = np.arange(self.images.shape[0], dtype=np.int64)
        else:
            self.ids = np.asarray(self.ids, dtype=np.int64)
            if self.ids.shape != self.labels.shape:
                raise ValueError("ids must align with labels")
        if self.image_shape is not None:
            self.image_shape = tuple(int(d) for d in self.image_shape)
            if int(np.prod(self.image_shape)) != self.images.shape[1]:
                raise ValueError(
                    f"image_shape {self.image_shape} does not match vector length "
                    f"{self.images.shape[1]}"
                )

    def __len__(self):
        return self.images.shape[0]

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.images[indices], self.labels[indices], self.ids[indices], self.image_shape
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 0


# ==================== initialization ====================


def init_model(dims, hidden_activation=Activation.SIGMOID, seed=0, zero_bias=False):
    """Random model with layer sizes ``dims``; weights ~ N(0, 1/fan_in)."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ValueError("need at least input and output dimensions")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        act = Activation.IDENTITY if i == len(dims) - 2 else hidden_activation
        weight = rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in)
        bias = np.zeros(fan_out) if zero_bias else 0.01 * rng.standard_normal(fan_out)
        layers.append(Layer(weight, bias, act))
    return ClassifierModel(layers)


# ==================== forward ====================


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise ValueError(f"input must be a vector of length {model.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite entries")
    return x


def _forward_trace(model, x):
    """Returns (pre_activations per layer, outputs per layer with outs[0]=x)."""
    outs = [x]
    pres = []
    for layer in model.layers:
        z = layer.weight @ outs[-1] + layer.bias
        pres.append(z)
        outs.append(layer.activation.apply(z))
    return pres, outs


def logits(model, x):
    return _forward_trace(model, _check_input(model, x))[1][-1]


def log_softmax(z):
    z = z - np.max(z)
    return z - np.log(np.sum(np.exp(z)))


def softmax(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


def forward(model, x):
    """Class probabilities P(. | x); stabilized, sums to 1 within 1e-12."""
    return softmax(logits(model, x))


def log_probs(model, x):
    return log_softmax(logits(model, x))


# ==================== per-class gradients ====================


def logprob_grad_input(model, x):
    """Gradient matrix of log P(y | x) w.r.t. x, one row per class.

    Row y is (e_y - p)^T D_L W_L ... D_1 W_1 where D_l holds the activation
    derivatives at the pre-activations; the softmax pullback contributes
    the (e_y - p) factor for every class jointly.
    """
    x = _check_input(model, x)
    pres, outs = _forward_trace(model, x)
    p = softmax(outs[-1])
    k = model.class_count
    m = np.eye(k) - p[None, :]  # rows (e_y - p)^T
    for layer, z in zip(reversed(model.layers), reversed(pres)):
        m = (m * layer.activation.deriv(z)[None, :]) @ layer.weight
    return m


def _backprop_errors(model, x):
    """Per-layer error matrices: row y of errs[l] is dlogP(y)/d(pre-act of layer l)."""
    pres, outs = _forward_trace(model, x)
    p = softmax(outs[-1])
    k = model.class_count
    m = np.eye(k) - p[None, :]
    errs = [None] * len(model.layers)
    for ell in range(len(model.layers) - 1, -1, -1):
        m = m * model.layers[ell].activation.deriv(pres[ell])[None, :]
        errs[ell] = m
        if ell > 0:
            m = m @ model.layers[ell].weight
    return errs, outs, p


def _check_layer_index(model, layer):
    if layer is not None and not (0 <= layer < len(model.layers)):
        raise ValueError(f"layer index {layer} outside 0..{len(model.layers) - 1}")


def logprob_grad_params(model, x, layer=None):
    """Gradient of log P(y | x) w.r.t. flattened parameters, one row per class.

    ``layer=None`` selects all trainable parameters; an integer restricts to
    that layer's block. Columns follow the fixed flatten order (weights
    row-major, then bias, layer-major).
    """
    x = _check_input(model, x)
    _check_layer_index(model, layer)
    errs, outs, _ = _backprop_errors(model, x)
    sel = range(len(model.layers)) if layer is None else [layer]
    blocks = []
    for ell in sel:
        err = errs[ell]            # (K, fan_out)
        o_prev = outs[ell]         # (fan_in,)
        wgrad = err[:, :, None] * o_prev[None, None, :]  # (K, fan_out, fan_in)
        blocks.append(np.concatenate([wgrad.reshape(err.shape[0], -1), err], axis=1))
    return np.hstack(blocks)


# ==================== parameter flattening ====================


def param_count(model, layer=None):
    _check_layer_index(model, layer)
    sel = model.layers if layer is None else [model.layers[layer]]
    return sum(l.weight.size + l.bias.size for l in sel)


def flatten_params(model, layer=None):
    _check_layer_index(model, layer)
    sel = model.layers if layer is None else [model.layers[layer]]
    return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in sel])


def with_params(model, vec, layer=None):
    """Copy of the model with the selected parameter block replaced by ``vec``."""
    _check_layer_index(model, layer)
    vec = np.asarray(vec, dtype=np.float64)
    expected = param_count(model, layer)
    if vec.shape != (expected,):
        raise ValueError(f"parameter vector must have length {expected}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("parameter vector contains non-finite entries")
    out = model.copy()
    sel = range(len(out.layers)) if layer is None else [layer]
    pos = 0
    for ell in sel:
        l = out.layers[ell]
        w_n, b_n = l.weight.size, l.bias.size
        l.weight = vec[pos : pos + w_n].reshape(l.weight.shape).copy()
        pos += w_n
        l.bias = vec[pos : pos + b_n].copy()
        pos += b_n
    return ClassifierModel(out.layers)


# ==================== training ====================


def _forward_batch(model, x_batch):
    outs = [x_batch]
    pres = []
    for layer in model.layers:
        z = outs[-1] @ layer.weight.T + layer.bias[None, :]
        pres.append(z)
        outs.append(layer.activation.apply(z))
    return pres, outs


def batch_log_probs(model, x_batch):
    z = _forward_batch(model, np.asarray(x_batch, dtype=np.float64))[1][-1]
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def accuracy(model, dataset):
    """Fraction of dataset samples whose argmax prediction matches the label."""
    preds = np.argmax(batch_log_probs(model, dataset.images), axis=1)
    return float(np.mean(preds == dataset.labels))


def train_sgd(model, dataset, config):
    """Plain minibatch SGD on mean cross-entropy; deterministic given seed.

    Returns (trained model, per-epoch mean losses). Aborts with a diagnostic
    if the loss stops being finite.
    """
    if np.any(dataset.labels >= model.class_count):
        raise ValueError("dataset contains labels outside the model's class range")
    if config.batch_size < 1 or config.epochs < 0:
        raise ValueError("batch_size must be >= 1 and epochs >= 0")
    model = model.copy()
    n = len(dataset)
    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = dataset.images[idx]
            yb = dataset.labels[idx]
            b = idx.size
            pres, outs = _forward_batch(model, xb)
            z = outs[-1] - outs[-1].max(axis=1, keepdims=True)
            log_z = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            loss = -log_z[np.arange(b), yb].mean()
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training aborted: non-finite loss at epoch {epoch}, batch start {start}"
                )
            loss_sum += loss * b
            delta = np.exp(log_z)
            delta[np.arange(b), yb] -= 1.0
            delta /= b
            for ell in range(len(model.layers) - 1, -1, -1):
                layer = model.layers[ell]
                if ell < len(model.layers) - 1:
                    delta = delta * layer.activation.deriv(pres[ell])
                w_grad = delta.T @ outs[ell]
                b_grad = delta.sum(axis=0)
                if ell > 0:
                    delta = delta @ layer.weight
                layer.weight = layer.weight - lr * w_grad
                layer.bias = layer.bias - lr * b_grad
        losses.append(float(loss_sum / n))
    return model, losses


# ==================== gradient verification ====================


def finite_diff_check(model, x, step=1e-4):
    """Worst relative error between analytic and central-difference gradients.

    Covers both the input gradient and the all-parameters gradient for every
    class. Relative error uses max(|a|, |b|, 1e-12) in the denominator so
    exactly-zero pairs compare clean.
    """
    x = _check_input(model, x)

    def rel(a, b):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)
        return np.max(np.abs(a - b) / denom)

    fd_in = np.empty((model.class_count, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        fd_in[:, j] = (log_probs(model, x + e) - log_probs(model, x - e)) / (2 * step)
    worst = rel(logprob_grad_input(model, x), fd_in)

    theta = flatten_params(model)
    fd_par = np.empty((model.class_count, theta.size))
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = step
        hi = log_probs(with_params(model, theta + e), x)
        lo = log_probs(with_params(model, theta - e), x)
        fd_par[:, j] = (hi - lo) / (2 * step)
    return max(worst, rel(logprob_grad_params(model, x), fd_par))
