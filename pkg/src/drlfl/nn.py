"""Dense MLP engine: flat parameter vectors, forward pass, manual backprop, SGD.

Everything here is a pure function of its arguments. ``ParamVector`` values are
stored read-only so that a vector handed to a worker can never be changed
behind the round loop's back.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")
HEADS = ("softmax_xent", "linear", "sigmoid")


class LayoutError(ValueError):
    """Parameter layouts or input dimensions do not line up."""


@dataclass(frozen=True, eq=False)
class ParamVector:
    """All trainable parameters of an MLP as one float64 vector.

    ``layout`` lists ``(fan_in, fan_out)`` per layer; layer ``i`` occupies a
    ``fan_in*fan_out`` weight block (row-major, shape ``(fan_in, fan_out)``)
    followed by ``fan_out`` biases.
    """

    values: np.ndarray
    layout: tuple[tuple[int, int], ...]

    def __post_init__(self):
        layout = tuple((int(a), int(b)) for a, b in self.layout)
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        expected = layout_size(layout)
        if values.size != expected:
            raise LayoutError(f"vector has {values.size} values, layout needs {expected}")
        values.setflags(write=False)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def check_layout(self, other: "ParamVector") -> None:
        if self.layout != other.layout:
            raise LayoutError(f"layout mismatch: {self.layout} vs {other.layout}")

    def with_values(self, values) -> "ParamVector":
        return ParamVector(values, self.layout)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Read-only ``(W, b)`` views per layer."""
        out = []
        pos = 0
        for fan_in, fan_out in self.layout:
            w = self.values[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = self.values[pos:pos + fan_out]
            pos += fan_out
            out.append((w, b))
        return out

    def __add__(self, other):
        self.check_layout(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        self.check_layout(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar):
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    __hash__ = None


# Gradients share the exact representation of the parameters they belong to.
GradVector = ParamVector


def layout_size(layout: Sequence[tuple[int, int]]) -> int:
    return sum(a * b + b for a, b in layout)


def zeros_like(params: ParamVector) -> ParamVector:
    return ParamVector(np.zeros(len(params)), params.layout)


def concat_layers(layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> ParamVector:
    """Build a ParamVector from explicit ``(W, b)`` arrays."""
    layout = []
    chunks = []
    for w, b in layers:
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        if b.size != w.shape[1]:
            raise LayoutError(f"bias length {b.size} does not match fan_out {w.shape[1]}")
        layout.append(w.shape)
        chunks.extend([w.reshape(-1), b])
    return ParamVector(np.concatenate(chunks) if chunks else np.zeros(0), tuple(layout))


@dataclass(frozen=True)
class MlpSpec:
    """Shape and nonlinearities of a dense network.

    ``activation`` is either a single name applied to every hidden layer or one
    name per hidden layer. ``output_head`` picks the output transform and the
    training loss: ``softmax_xent`` (integer labels, cross-entropy), ``linear``
    and ``sigmoid`` (real targets, half squared error).
    """

    layer_sizes: tuple[int, ...]
    activation: str | tuple[str, ...] = "relu"
    output_head: str = "softmax_xent"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"layer_sizes needs >= 2 positive entries, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)
        acts = self.activation
        if isinstance(acts, str):
            acts = (acts,) * (len(sizes) - 2)
        acts = tuple(acts)
        if len(acts) != len(sizes) - 2:
            raise ValueError(f"need {len(sizes) - 2} hidden activations, got {len(acts)}")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        object.__setattr__(self, "activation", acts)
        if self.output_head not in HEADS:
            raise ValueError(f"unknown output head {self.output_head!r}")

    @property
    def layout(self) -> tuple[tuple[int, int], ...]:
        s = self.layer_sizes
        return tuple((s[i], s[i + 1]) for i in range(len(s) - 1))

    @property
    def num_params(self) -> int:
        return layout_size(self.layout)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]


def init_params(spec: MlpSpec, seed: int) -> ParamVector:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in spec.layout:
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ParamVector(np.concatenate(chunks), spec.layout)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a):
    # derivative of the activation expressed through pre-activation z / output a
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check(spec: MlpSpec, params: ParamVector, x: np.ndarray):
    if params.layout != spec.layout:
        raise LayoutError(f"params layout {params.layout} does not match spec {spec.layout}")
    if x.shape[-1] != spec.input_dim:
        raise LayoutError(f"input has {x.shape[-1]} features, spec expects {spec.input_dim}")


def _forward_cache(spec, params, x):
    zs, acts = [], [x]
    layers = params.layers()
    a = x
    for i, (w, b) in enumerate(layers):
        z = a @ w + b
        if i < len(layers) - 1:
            a = _act(spec.activation[i], z)
        elif spec.output_head == "softmax_xent":
            a = _softmax(z)
        elif spec.output_head == "sigmoid":
            a = _sigmoid(z)
        else:
            a = z
        zs.append(z)
        acts.append(a)
    return zs, acts


def forward(spec: MlpSpec, params: ParamVector, x) -> np.ndarray:
    """Network output for one sample (1-D input) or a batch (rows)."""
    x = np.asarray(x, dtype=np.float64)
    _check(spec, params, x)
    single = x.ndim == 1
    _, acts = _forward_cache(spec, params, np.atleast_2d(x))
    out = acts[-1]
    return out[0] if single else out


def _backprop_from_z(spec, params, zs, acts, dz):
    layers = params.layers()
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[i] = (acts[i].T @ dz, dz.sum(axis=0))
        da = dz @ w.T
        if i > 0:
            dz = da * _act_grad(spec.activation[i - 1], zs[i - 1], acts[i])
    values = np.concatenate([np.concatenate([gw.reshape(-1), gb]) for gw, gb in grads])
    return ParamVector(values, params.layout), da


def backprop(spec: MlpSpec, params: ParamVector, x, grad_out) -> tuple[GradVector, np.ndarray]:
    """Vector-Jacobian product through the network.

    ``grad_out`` is dL/d(output) with the same shape as ``forward(spec, params, x)``
    (post-head, so probabilities for softmax). Returns ``(dL/dparams, dL/dx)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check(spec, params, x)
    g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
    zs, acts = _forward_cache(spec, params, x)
    out = acts[-1]
    if g.shape != out.shape:
        raise LayoutError(f"grad_out shape {g.shape} does not match output {out.shape}")
    if spec.output_head == "softmax_xent":
        dz = out * (g - (g * out).sum(axis=1, keepdims=True))
    elif spec.output_head == "sigmoid":
        dz = g * out * (1.0 - out)
    else:
        dz = g
    return _backprop_from_z(spec, params, zs, acts, dz)


def _targets(spec, y, m):
    if spec.output_head == "softmax_xent":
        y = np.asarray(y).reshape(-1)
        if y.size != m:
            raise LayoutError(f"{y.size} labels for {m} samples")
        if y.size and (y.min() < 0 or y.max() >= spec.output_dim):
            raise ValueError(f"labels must lie in [0, {spec.output_dim})")
        return y.astype(np.int64)
    y = np.asarray(y, dtype=np.float64).reshape(m, -1)
    if y.shape[1] != spec.output_dim:
        raise LayoutError(f"targets have {y.shape[1]} columns, spec outputs {spec.output_dim}")
    return y


def _per_sample_loss(spec, out, y):
    if spec.output_head == "softmax_xent":
        p = out[np.arange(len(y)), y]
        return -np.log(np.maximum(p, np.finfo(np.float64).tiny))
    return 0.5 * ((out - y) ** 2).sum(axis=1)


def batch_loss(spec: MlpSpec, params: ParamVector, x, y) -> float:
    """Mean training loss over a batch (cross-entropy or half squared error)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = forward(spec, params, x)
    return float(_per_sample_loss(spec, out, _targets(spec, y, len(x))).mean())


def per_sample_losses(spec: MlpSpec, params: ParamVector, x, y) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = forward(spec, params, x)
    return _per_sample_loss(spec, out, _targets(spec, y, len(x)))


def backward(spec: MlpSpec, params: ParamVector, batch) -> tuple[GradVector, float]:
    """Gradient of the mean batch loss, plus that loss.

    ``batch`` is ``(x, y)``: integer labels for a softmax head, real targets
    (one row per sample) otherwise.
    """
    x, y = batch
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m = len(x)
    if m == 0:
        raise ValueError("empty batch")
    _check(spec, params, x)
    y = _targets(spec, y, m)
    zs, acts = _forward_cache(spec, params, x)
    out = acts[-1]
    loss = float(_per_sample_loss(spec, out, y).mean())
    if spec.output_head == "softmax_xent":
        dz = out.copy()
        dz[np.arange(m), y] -= 1.0
        dz /= m
    elif spec.output_head == "sigmoid":
        dz = (out - y) * out * (1.0 - out) / m
    else:
        dz = (out - y) / m
    grad, _ = _backprop_from_z(spec, params, zs, acts, dz)
    return grad, loss


def sgd_step(params: ParamVector, grad: GradVector, lr: float) -> ParamVector:
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    params.check_layout(grad)
    return params.with_values(params.values - lr * grad.values)


# -- serialization -----------------------------------------------------------
# layout header: uint32 layer count, then (fan_in, fan_out) uint32 pairs, all
# little-endian; then the float64 values little-endian.

def params_to_bytes(params: ParamVector) -> bytes:
    header = struct.pack("<I", len(params.layout))
    header += b"".join(struct.pack("<II", a, b) for a, b in params.layout)
    return header + params.values.astype("<f8").tobytes()


def params_from_bytes(buf: bytes) -> ParamVector:
    if len(buf) < 4:
        raise LayoutError("truncated parameter header")
    (count,) = struct.unpack_from("<I", buf, 0)
    end = 4 + 8 * count
    if len(buf) < end:
        raise LayoutError("truncated parameter header")
    flat = struct.unpack_from(f"<{2 * count}I", buf, 4)
    layout = tuple(zip(flat[0::2], flat[1::2]))
    n = layout_size(layout)
    if len(buf) != end + 8 * n:
        raise LayoutError(f"expected {n} float64 values, payload has {(len(buf) - end) / 8:g}")
    return ParamVector(np.frombuffer(buf, dtype="<f8", offset=end).astype(np.float64), layout)


def save_params(path, params: ParamVector) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path) -> ParamVector:
    return params_from_bytes(Path(path).read_bytes())
