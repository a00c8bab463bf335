"""Deterministic neural-network primitives on float64 numpy arrays.

Hand-written forward and backward passes for every layer the speech model
needs: 1-D valid convolution, non-overlapping max pooling, global max
pooling over time, dense, ReLU and sigmoid, plus an Adam optimizer and a
central-finite-difference gradient checker.

All training math is 64-bit and there is no hidden global state, so
identical inputs always produce bit-identical outputs.  Convolutions are
valid (no padding) and pooling breaks ties toward the earliest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericalError, UsageError

# Smallest/largest float64 strictly inside (0, 1); sigmoid output is
# clipped here so the open-interval contract survives saturation.
_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


class Parameter:
    """A trainable tensor bundled with its gradient and Adam state."""

    def __init__(self, value, name: str = ""):
        self.value = np.ascontiguousarray(np.asarray(value, dtype=np.float64))
        self.name = name
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Parameter(name={self.name!r}, shape={self.value.shape})"


@dataclass
class AdamConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise UsageError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.beta1 < 1.0:
            raise UsageError(f"beta1 must lie in (0,1), got {self.beta1}")
        if not 0.0 < self.beta2 < 1.0:
            raise UsageError(f"beta2 must lie in (0,1), got {self.beta2}")
        if not self.epsilon > 0:
            raise UsageError(f"epsilon must be positive, got {self.epsilon}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamConfig":
        unknown = set(d) - {"learning_rate", "beta1", "beta2", "epsilon"}
        if unknown:
            raise UsageError(f"unknown Adam config fields: {sorted(unknown)}")
        return cls(**d)


def _check_2d(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"{what} must be 2-D (time x channels), got shape {x.shape}")
    return x


# ---------------------------------------------------------------------------
# Functional ops
# ---------------------------------------------------------------------------

def conv1d_forward(x, kernels, bias, stride: int = 1) -> np.ndarray:
    """Valid 1-D convolution over time.

    x: T x Cin, kernels: K x Cin x F, bias: F.  Output T' x F with
    T' = floor((T - K) / stride) + 1 and
    out[t, f] = bias[f] + sum_{k,c} x[t*stride + k, c] * kernels[k, c, f].
    """
    x = _check_2d(x, "conv input")
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if kernels.ndim != 3:
        raise DimensionError(f"kernels must be K x Cin x F, got shape {kernels.shape}")
    k, cin, f = kernels.shape
    if bias.shape != (f,):
        raise DimensionError(f"bias axis must have size {f} (filters), got shape {bias.shape}")
    if x.shape[1] != cin:
        raise DimensionError(
            f"input channel axis has size {x.shape[1]} but kernels expect {cin}"
        )
    if stride < 1:
        raise UsageError(f"stride must be >= 1, got {stride}")
    if x.shape[0] < k:
        raise DimensionError(
            f"time axis has {x.shape[0]} frames but the kernel spans {k}"
        )
    windows = sliding_window_view(x, k, axis=0)[::stride]  # T' x Cin x K
    out = np.tensordot(windows, kernels, axes=([2, 1], [0, 1])) + bias
    return np.ascontiguousarray(out)


def conv1d_backward(upstream, cached_input, kernels, stride: int = 1):
    """Gradients of conv1d_forward w.r.t. input, kernels and bias."""
    if cached_input is None:
        raise UsageError("conv1d_backward needs the cached forward input")
    x = _check_2d(cached_input, "cached conv input")
    upstream = _check_2d(upstream, "upstream gradient")
    kernels = np.asarray(kernels, dtype=np.float64)
    k, cin, f = kernels.shape
    t_out = upstream.shape[0]
    if upstream.shape[1] != f:
        raise DimensionError(
            f"upstream filter axis has size {upstream.shape[1]}, expected {f}"
        )
    windows = sliding_window_view(x, k, axis=0)[::stride]  # T' x Cin x K
    if windows.shape[0] != t_out:
        raise DimensionError(
            f"upstream has {t_out} steps but the forward pass produced {windows.shape[0]}"
        )
    bias_grad = upstream.sum(axis=0)
    kernel_grad = np.tensordot(windows, upstream, axes=([0], [0]))  # Cin x K x F
    kernel_grad = np.ascontiguousarray(kernel_grad.transpose(1, 0, 2))
    input_grad = np.zeros_like(x)
    for kk in range(k):
        stop = kk + stride * (t_out - 1) + 1
        input_grad[kk:stop:stride] += upstream @ kernels[kk].T
    return input_grad, kernel_grad, bias_grad


def maxpool1d(x, width: int):
    """Non-overlapping max pooling over time; trailing remainder frames drop.

    Returns (pooled floor(T/width) x C, argmax row indices into x).  Ties
    break toward the earliest index.
    """
    x = _check_2d(x, "pool input")
    if width < 1:
        raise UsageError(f"pool width must be >= 1, got {width}")
    t, c = x.shape
    if t < width:
        raise DimensionError(f"time axis has {t} frames, shorter than pool width {width}")
    nwin = t // width
    blocks = x[: nwin * width].reshape(nwin, width, c)
    local = blocks.argmax(axis=1)
    pooled = np.take_along_axis(blocks, local[:, None, :], axis=1)[:, 0, :]
    argmax = local + (np.arange(nwin) * width)[:, None]
    return np.ascontiguousarray(pooled), argmax


def maxpool1d_backward(upstream, argmax, input_length: int) -> np.ndarray:
    """Routes each pooled gradient back to its argmax row."""
    upstream = _check_2d(upstream, "upstream gradient")
    grad = np.zeros((input_length, upstream.shape[1]))
    cols = np.arange(upstream.shape[1])[None, :]
    grad[argmax, cols] = upstream
    return grad


def global_maxpool_time(x) -> np.ndarray:
    """Per-channel maximum over all time steps, as a 1 x C tensor."""
    x = _check_2d(x, "pool input")
    if x.shape[0] < 1:
        raise DimensionError("time axis is empty")
    return x.max(axis=0, keepdims=True)


def global_maxpool_time_backward(upstream, x) -> np.ndarray:
    x = _check_2d(x, "cached pool input")
    upstream = np.asarray(upstream, dtype=np.float64).reshape(1, x.shape[1])
    grad = np.zeros_like(x)
    grad[x.argmax(axis=0), np.arange(x.shape[1])] = upstream[0]
    return grad


def dense(x, weights, bias) -> np.ndarray:
    """Affine map x @ weights + bias for a 1 x N input."""
    x = _check_2d(x, "dense input")
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.shape[0] != 1:
        raise DimensionError(f"dense expects a 1 x N input, got shape {x.shape}")
    if weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"input axis of size {x.shape[1]} does not match weight rows "
            f"{weights.shape[0] if weights.ndim == 2 else weights.shape}"
        )
    if bias.shape != (weights.shape[1],):
        raise DimensionError(
            f"bias axis must have size {weights.shape[1]}, got shape {bias.shape}"
        )
    return x @ weights + bias


def dense_backward(upstream, cached_input, weights):
    upstream = _check_2d(upstream, "upstream gradient")
    x = _check_2d(cached_input, "cached dense input")
    weights = np.asarray(weights, dtype=np.float64)
    input_grad = upstream @ weights.T
    weight_grad = x.T @ upstream
    bias_grad = upstream[0].copy()
    return input_grad, weight_grad, bias_grad


def relu(t) -> np.ndarray:
    return np.maximum(np.asarray(t, dtype=np.float64), 0.0)


def relu_backward(upstream, cached_input) -> np.ndarray:
    return np.asarray(upstream, dtype=np.float64) * (np.asarray(cached_input) > 0)


def sigmoid(t) -> np.ndarray:
    """Numerically stable logistic; output clipped strictly inside (0, 1)."""
    t = np.asarray(t, dtype=np.float64)
    z = np.exp(-np.abs(t))
    out = np.where(t >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return np.clip(out, _SIG_LO, _SIG_HI)


def sigmoid_backward(upstream, cached_output) -> np.ndarray:
    y = np.asarray(cached_output, dtype=np.float64)
    return np.asarray(upstream, dtype=np.float64) * y * (1.0 - y)


def adam_step(params, config: AdamConfig) -> None:
    """One Adam update with bias correction over a parameter set.

    Gradients are left untouched; the caller zeroes them.  The step is
    aborted before any mutation if a gradient contains NaN/Inf.
    """
    params = list(params)
    if not params:
        return
    steps = {p.step_count for p in params}
    if len(steps) != 1:
        raise UsageError(f"inconsistent step_count across parameters: {sorted(steps)}")
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter {p.name!r}; step aborted")
    t = params[0].step_count + 1
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    for p in params:
        p.adam_m *= config.beta1
        p.adam_m += (1.0 - config.beta1) * p.grad
        p.adam_v *= config.beta2
        p.adam_v += (1.0 - config.beta2) * np.square(p.grad)
        m_hat = p.adam_m / bc1
        v_hat = p.adam_v / bc2
        p.value -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        p.step_count = t


# ---------------------------------------------------------------------------
# Layer objects (cache their forward inputs for the backward pass)
# ---------------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Conv1D:
    def __init__(self, width, in_channels, filters, stride=1, rng=None, name="conv"):
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = width * in_channels
        fan_out = width * filters
        self.stride = stride
        self.kernels = Parameter(
            glorot_uniform(rng, (width, in_channels, filters), fan_in, fan_out),
            name=f"{name}.kernels",
        )
        self.bias = Parameter(np.zeros(filters), name=f"{name}.bias")
        self._cache = None

    def parameters(self):
        return [self.kernels, self.bias]

    def forward(self, x):
        self._cache = np.asarray(x, dtype=np.float64)
        return conv1d_forward(self._cache, self.kernels.value, self.bias.value, self.stride)

    def backward(self, upstream):
        if self._cache is None:
            raise UsageError("backward called before forward")
        dx, dk, db = conv1d_backward(upstream, self._cache, self.kernels.value, self.stride)
        self.kernels.grad += dk
        self.bias.grad += db
        return dx


class MaxPool1D:
    def __init__(self, width):
        self.width = width
        self._argmax = None
        self._length = None

    def parameters(self):
        return []

    def forward(self, x):
        out, self._argmax = maxpool1d(x, self.width)
        self._length = np.asarray(x).shape[0]
        return out

    def backward(self, upstream):
        if self._argmax is None:
            raise UsageError("backward called before forward")
        return maxpool1d_backward(upstream, self._argmax, self._length)


class GlobalMaxPool:
    def __init__(self):
        self._cache = None

    def parameters(self):
        return []

    def forward(self, x):
        self._cache = np.asarray(x, dtype=np.float64)
        return global_maxpool_time(self._cache)

    def backward(self, upstream):
        if self._cache is None:
            raise UsageError("backward called before forward")
        return global_maxpool_time_backward(upstream, self._cache)


class Dense:
    def __init__(self, in_dim, out_dim, rng=None, name="dense"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = Parameter(
            glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim), name=f"{name}.weights"
        )
        self.bias = Parameter(np.zeros(out_dim), name=f"{name}.bias")
        self._cache = None

    def parameters(self):
        return [self.weights, self.bias]

    def forward(self, x):
        self._cache = np.asarray(x, dtype=np.float64)
        return dense(self._cache, self.weights.value, self.bias.value)

    def backward(self, upstream):
        if self._cache is None:
            raise UsageError("backward called before forward")
        dx, dw, db = dense_backward(upstream, self._cache, self.weights.value)
        self.weights.grad += dw
        self.bias.grad += db
        return dx


class ReLU:
    def __init__(self):
        self._cache = None

    def parameters(self):
        return []

    def forward(self, x):
        self._cache = np.asarray(x, dtype=np.float64)
        return relu(self._cache)

    def backward(self, upstream):
        if self._cache is None:
            raise UsageError("backward called before forward")
        return relu_backward(upstream, self._cache)


class Sigmoid:
    def __init__(self):
        self._out = None

    def parameters(self):
        return []

    def forward(self, x):
        self._out = sigmoid(x)
        return self._out

    def backward(self, upstream):
        if self._out is None:
            raise UsageError("backward called before forward")
        return sigmoid_backward(upstream, self._out)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

class ScalarProbe:
    """Composes layers into a fragment whose scalar output is the sum of the
    final activation.  Implements the fragment protocol grad_check expects:
    parameters(), value(x), value_and_grad(x)."""

    def __init__(self, layers):
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def value(self, x):
        h = x
        for layer in self.layers:
            h = layer.forward(h)
        return float(np.sum(h))

    def value_and_grad(self, x):
        for p in self.parameters():
            p.zero_grad()
        h = x
        for layer in self.layers:
            h = layer.forward(h)
        g = np.ones_like(h)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return float(np.sum(h))


@dataclass
class GradCheckReport:
    h: float
    per_param: dict = field(default_factory=dict)
    entries_checked: int = 0

    @property
    def max_relative_error(self) -> float:
        return max(self.per_param.values(), default=0.0)


def grad_check(fragment, x, h: float = 1e-5, entries_per_param=None, seed: int = 0,
               rel_floor: float = 1e-4) -> GradCheckReport:
    """Compares analytic gradients against central finite differences.

    The fragment must expose parameters() and value_and_grad(x) (a pure
    value(x) is used for probing when available).  Relative error floors
    its denominator at rel_floor so near-zero gradients do not blow up
    the ratio.  entries_per_param limits how many coordinates of each
    parameter are probed (seeded subsample); None checks all of them.
    """
    params = list(fragment.parameters())
    report = GradCheckReport(h=h)
    if not params:
        return report
    fragment.value_and_grad(x)
    analytic = [p.grad.copy() for p in params]
    probe = getattr(fragment, "value", fragment.value_and_grad)
    rng = np.random.default_rng(seed)
    for p, a_grad in zip(params, analytic):
        n = p.value.size
        if entries_per_param is not None and entries_per_param < n:
            idx = rng.choice(n, size=entries_per_param, replace=False)
        else:
            idx = np.arange(n)
        worst = 0.0
        for i in idx:
            orig = p.value.flat[i]
            p.value.flat[i] = orig + h
            hi = probe(x)
            p.value.flat[i] = orig - h
            lo = probe(x)
            p.value.flat[i] = orig
            fd = (hi - lo) / (2.0 * h)
            a = a_grad.flat[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), rel_floor)
            if rel > worst:
                worst = rel
        key = p.name or f"param{params.index(p)}"
        report.per_param[key] = worst
        report.entries_checked += len(idx)
    for p, a_grad in zip(params, analytic):
        p.grad[...] = a_grad
    return report
