"""Trainable layers with explicit forward and backward passes.

Every kernel works on batched input: sequences are (batch, frames, features)
and dense layers are applied time-distributed over the frame axis. The
functional kernels return a cache consumed by the matching backward kernel;
the layer classes below hold parameters, gradients and the last cache.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import SongSpeechEmotionError


class ShapeError(SongSpeechEmotionError, ValueError):
    """Raised when an input does not fit a layer."""


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


# Dense

def _dense_forward(x, W, b, activation="linear"):
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"dense layer expects {W.shape[0]} inputs, got {x.shape[-1]}")
    z = x @ W + b
    if activation == "relu":
        out = _relu(z)
    elif activation == "softmax":
        out = softmax(z)
    elif activation == "linear":
        out = z
    else:
        raise ValueError(f"unknown activation {activation!r}")
    return out, (x, z, W, activation)


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray, activation: str = "linear") -> np.ndarray:
    """act(x W + b) over the last axis."""
    return _dense_forward(np.asarray(x, dtype=np.float64), W, b, activation)[0]


def dense_backward(dout: np.ndarray, cache) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    x, z, W, activation = cache
    if activation == "softmax":
        raise ValueError("backpropagate softmax through softmax_xent instead")
    dz = dout * (z > 0) if activation == "relu" else dout
    flat_x = x.reshape(-1, x.shape[-1])
    flat_dz = dz.reshape(-1, dz.shape[-1])
    grads = {"W": flat_x.T @ flat_dz, "b": flat_dz.sum(axis=0)}
    return dz @ W.T, grads


# LSTM

def _check_sequence(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[np.newaxis]
    if x.ndim != 3 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"expected (batch, frames, {W.shape[0]}) input, got {x.shape}")
    return x


def _lstm_forward(x, params, return_sequences=True, h0=None, c0=None):
    W, U, b = params["W"], params["U"], params["b"]
    x = _check_sequence(x, W)
    batch, steps, _ = x.shape
    H = U.shape[0]

    h = np.zeros((batch, H)) if h0 is None else np.broadcast_to(h0, (batch, H)).copy()
    c = np.zeros((batch, H)) if c0 is None else np.broadcast_to(c0, (batch, H)).copy()
    projected = x @ W + b
    gates = np.empty((batch, steps, 4 * H))
    cells = np.empty((batch, steps + 1, H))
    hiddens = np.empty((batch, steps + 1, H))
    tanh_cells = np.empty((batch, steps, H))
    hiddens[:, 0], cells[:, 0] = h, c

    for t in range(steps):
        a = projected[:, t] + h @ U
        i = expit(a[:, :H])
        f = expit(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = expit(a[:, 3 * H:])
        c = f * c + i * g
        tanh_cells[:, t] = np.tanh(c)
        h = o * tanh_cells[:, t]
        gates[:, t] = np.concatenate((i, f, g, o), axis=1)
        cells[:, t + 1], hiddens[:, t + 1] = c, h

    out = hiddens[:, 1:] if return_sequences else hiddens[:, -1]
    return out, (x, params, gates, cells, hiddens, tanh_cells, return_sequences)


def lstm_layer(x_seq: np.ndarray, params: dict[str, np.ndarray], return_sequences: bool = True,
               h0: np.ndarray | None = None, c0: np.ndarray | None = None) -> np.ndarray:
    """Run an LSTM (gates i, f, g, o) over (batch, frames, features) input.

    A 2-D (frames, features) input is treated as a batch of one.
    """
    return _lstm_forward(x_seq, params, return_sequences, h0, c0)[0]


def lstm_backward(dout: np.ndarray, cache) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Backpropagation through time for _lstm_forward."""
    x, params, gates, cells, hiddens, tanh_cells, return_sequences = cache
    W, U = params["W"], params["U"]
    batch, steps, _ = x.shape
    H = U.shape[0]

    if not return_sequences:
        full = np.zeros((batch, steps, H))
        full[:, -1] = dout
        dout = full

    dgates = np.empty_like(gates)
    dU = np.zeros_like(U)
    dh_next = np.zeros((batch, H))
    dc_next = np.zeros((batch, H))

    for t in reversed(range(steps)):
        i, f, g, o = (gates[:, t, k * H:(k + 1) * H] for k in range(4))
        tc = tanh_cells[:, t]
        dh = dout[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc ** 2)
        da = np.concatenate((
            dc * g * i * (1.0 - i),
            dc * cells[:, t] * f * (1.0 - f),
            dc * i * (1.0 - g ** 2),
            dh * tc * o * (1.0 - o),
        ), axis=1)
        dgates[:, t] = da
        dU += hiddens[:, t].T @ da
        dh_next = da @ U.T
        dc_next = dc * f

    flat = dgates.reshape(-1, 4 * H)
    grads = {
        "W": x.reshape(-1, x.shape[-1]).T @ flat,
        "U": dU,
        "b": flat.sum(axis=0),
    }
    return dgates @ W.T, grads


# GRU

def _gru_forward(x, params, return_sequences=True, h0=None):
    W, U, b = params["W"], params["U"], params["b"]
    x = _check_sequence(x, W)
    batch, steps, _ = x.shape
    H = U.shape[0]

    h = np.zeros((batch, H)) if h0 is None else np.broadcast_to(h0, (batch, H)).copy()
    projected = x @ W + b
    gates = np.empty((batch, steps, 3 * H))
    hiddens = np.empty((batch, steps + 1, H))
    hiddens[:, 0] = h

    for t in range(steps):
        p = projected[:, t]
        recurrent = h @ U[:, :2 * H]
        z = expit(p[:, :H] + recurrent[:, :H])
        r = expit(p[:, H:2 * H] + recurrent[:, H:])
        n = np.tanh(p[:, 2 * H:] + (r * h) @ U[:, 2 * H:])
        h = (1.0 - z) * h + z * n
        gates[:, t] = np.concatenate((z, r, n), axis=1)
        hiddens[:, t + 1] = h

    out = hiddens[:, 1:] if return_sequences else hiddens[:, -1]
    return out, (x, params, gates, hiddens, return_sequences)


def gru_layer(x_seq: np.ndarray, params: dict[str, np.ndarray], return_sequences: bool = True,
              h0: np.ndarray | None = None) -> np.ndarray:
    """Run a GRU with h = (1 - z) h_prev + z n, reset applied before U_n."""
    return _gru_forward(x_seq, params, return_sequences, h0)[0]


def gru_backward(dout: np.ndarray, cache) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    x, params, gates, hiddens, return_sequences = cache
    W, U = params["W"], params["U"]
    batch, steps, _ = x.shape
    H = U.shape[0]
    U_zr, U_n = U[:, :2 * H], U[:, 2 * H:]

    if not return_sequences:
        full = np.zeros((batch, steps, H))
        full[:, -1] = dout
        dout = full

    dgates = np.empty_like(gates)
    dU = np.zeros_like(U)
    dh_next = np.zeros((batch, H))

    for t in reversed(range(steps)):
        z, r, n = (gates[:, t, k * H:(k + 1) * H] for k in range(3))
        h_prev = hiddens[:, t]
        dh = dout[:, t] + dh_next

        da_n = dh * z * (1.0 - n ** 2)
        d_reset_h = da_n @ U_n.T
        da_z = dh * (n - h_prev) * z * (1.0 - z)
        da_r = d_reset_h * h_prev * r * (1.0 - r)
        da_zr = np.concatenate((da_z, da_r), axis=1)

        dgates[:, t] = np.concatenate((da_zr, da_n), axis=1)
        dU[:, :2 * H] += h_prev.T @ da_zr
        dU[:, 2 * H:] += (r * h_prev).T @ da_n
        dh_next = dh * (1.0 - z) + d_reset_h * r + da_zr @ U_zr.T

    flat = dgates.reshape(-1, 3 * H)
    grads = {
        "W": x.reshape(-1, x.shape[-1]).T @ flat,
        "U": dU,
        "b": flat.sum(axis=0),
    }
    return dgates @ W.T, grads


# Conv1D

def conv_output_length(steps: int, kernel_len: int, stride: int = 1) -> int:
    if steps < kernel_len:
        raise ShapeError(f"sequence of {steps} frames is shorter than kernel {kernel_len}")
    return (steps - kernel_len) // stride + 1


def _conv1d_forward(x, kernels, bias=None, stride=1, activation="relu"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[np.newaxis]
    kernel_len, channels_in, channels_out = kernels.shape
    if x.ndim != 3 or x.shape[-1] != channels_in:
        raise ShapeError(f"expected (batch, frames, {channels_in}) input, got {x.shape}")
    conv_output_length(x.shape[1], kernel_len, stride)

    windows = np.lib.stride_tricks.sliding_window_view(x, kernel_len, axis=1)[:, ::stride]
    z = np.einsum("btdk,kdc->btc", windows, kernels, optimize=True)
    if bias is not None:
        z = z + bias
    out = _relu(z) if activation == "relu" else z
    return out, (x, kernels, windows, z, stride, activation)


def conv1d_layer(x_seq: np.ndarray, kernels: np.ndarray, kernel_len: int | None = None,
                 stride: int = 1, bias: np.ndarray | None = None,
                 activation: str = "relu") -> np.ndarray:
    """Valid (unpadded) cross-correlation along the frame axis.

    Args:
        x_seq: (batch, frames, channels_in) or (frames, channels_in).
        kernels: (kernel_len, channels_in, channels_out).
        kernel_len: Optional check against kernels.shape[0].
        stride: Step between output positions.
        bias: Optional (channels_out,) bias.
        activation: "relu" or "linear".
    """
    if kernel_len is not None and kernel_len != kernels.shape[0]:
        raise ShapeError(f"kernel_len {kernel_len} does not match kernels of length {kernels.shape[0]}")
    return _conv1d_forward(x_seq, kernels, bias, stride, activation)[0]


def conv1d_backward(dout: np.ndarray, cache) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    x, kernels, windows, z, stride, activation = cache
    dz = dout * (z > 0) if activation == "relu" else dout
    kernel_len = kernels.shape[0]
    steps_out = dz.shape[1]

    grads = {
        "K": np.einsum("btdk,btc->kdc", windows, dz, optimize=True),
        "b": dz.sum(axis=(0, 1)),
    }
    dx = np.zeros_like(x)
    span = stride * (steps_out - 1) + 1
    for j in range(kernel_len):
        dx[:, j:j + span:stride] += dz @ kernels[j].T
    return dx, grads


# Dropout and loss

def dropout(x: np.ndarray, p: float, training: bool, rng: np.random.Generator | None = None):
    """Inverted dropout; the identity at inference or when p == 0."""
    return _dropout_forward(x, p, training, rng)[0]


def _dropout_forward(x, p, training, rng):
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def softmax_xent(logits: np.ndarray, label) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy and its gradient with respect to the logits.

    A single logit vector takes an integer label; a (batch, classes) matrix
    takes a label array and returns the batch-mean loss and gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    logits_2d = logits[np.newaxis] if single else logits
    labels = np.atleast_1d(np.asarray(label, dtype=int))

    shifted = logits_2d - logits_2d.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    losses = log_norm - shifted[rows, labels]

    grad = np.exp(shifted - log_norm[:, np.newaxis])
    grad[rows, labels] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / len(labels)


# Optimizer

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; params are updated in place."""
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, grad in grads.items():
        m = state.m.setdefault(name, np.zeros_like(grad))
        v = state.v.setdefault(name, np.zeros_like(grad))
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad ** 2
        params[name] -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return params, state


# Layer objects

def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """A layer holding parameters, their gradients and the last forward cache.

    Attributes:
        params: Trainable arrays by name.
        grads: Gradients from the last backward pass, same keys as params.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError


class Dense(Layer):
    """Fully connected layer, time-distributed over the frame axis."""

    def __init__(self, n_in: int, n_out: int, activation: str, rng: np.random.Generator):
        super().__init__()
        self.activation = activation
        self.params = {
            "W": glorot_uniform(rng, (n_in, n_out), n_in, n_out),
            "b": np.zeros(n_out),
        }

    def forward(self, x, training=False, rng=None):
        out, self._cache = _dense_forward(x, self.params["W"], self.params["b"], self.activation)
        return out

    def backward(self, dout):
        dx, self.grads = dense_backward(dout, self._cache)
        return dx

    def output_shape(self, input_shape):
        return (*input_shape[:-1], self.params["W"].shape[1])


class LSTM(Layer):
    def __init__(self, n_in: int, units: int, rng: np.random.Generator, return_sequences: bool = True):
        super().__init__()
        self.return_sequences = return_sequences
        bias = np.zeros(4 * units)
        bias[units:2 * units] = 1.0
        self.params = {
            "W": glorot_uniform(rng, (n_in, 4 * units), n_in, 4 * units),
            "U": glorot_uniform(rng, (units, 4 * units), units, 4 * units),
            "b": bias,
        }

    def forward(self, x, training=False, rng=None):
        out, self._cache = _lstm_forward(x, self.params, self.return_sequences)
        return out

    def backward(self, dout):
        dx, self.grads = lstm_backward(dout, self._cache)
        return dx

    def output_shape(self, input_shape):
        units = self.params["U"].shape[0]
        return (input_shape[0], units) if self.return_sequences else (units,)


class GRU(Layer):
    def __init__(self, n_in: int, units: int, rng: np.random.Generator, return_sequences: bool = True):
        super().__init__()
        self.return_sequences = return_sequences
        self.params = {
            "W": glorot_uniform(rng, (n_in, 3 * units), n_in, 3 * units),
            "U": glorot_uniform(rng, (units, 3 * units), units, 3 * units),
            "b": np.zeros(3 * units),
        }

    def forward(self, x, training=False, rng=None):
        out, self._cache = _gru_forward(x, self.params, self.return_sequences)
        return out

    def backward(self, dout):
        dx, self.grads = gru_backward(dout, self._cache)
        return dx

    def output_shape(self, input_shape):
        units = self.params["U"].shape[0]
        return (input_shape[0], units) if self.return_sequences else (units,)


class Conv1D(Layer):
    def __init__(self, n_in: int, channels: int, kernel_len: int, rng: np.random.Generator, stride: int = 1):
        super().__init__()
        self.stride = stride
        self.params = {
            "K": glorot_uniform(rng, (kernel_len, n_in, channels), kernel_len * n_in, kernel_len * channels),
            "b": np.zeros(channels),
        }

    def forward(self, x, training=False, rng=None):
        out, self._cache = _conv1d_forward(x, self.params["K"], self.params["b"], self.stride)
        return out

    def backward(self, dout):
        dx, self.grads = conv1d_backward(dout, self._cache)
        return dx

    def output_shape(self, input_shape):
        kernel_len, _, channels = self.params["K"].shape
        return (conv_output_length(input_shape[0], kernel_len, self.stride), channels)


class Dropout(Layer):
    def __init__(self, p: float):
        super().__init__()
        self.p = p

    def forward(self, x, training=False, rng=None):
        out, self._cache = _dropout_forward(x, self.p, training, rng)
        return out

    def backward(self, dout):
        return dout if self._cache is None else dout * self._cache

    def output_shape(self, input_shape):
        return input_shape


class Flatten(Layer):
    def forward(self, x, training=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._cache)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)
