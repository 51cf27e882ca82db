"""Dense float64 tensors with reverse-mode differentiation.

Only the handful of operations needed by the regularizer networks are
provided: convolution, leaky ReLU, 2x2 max pooling, nearest 2x upsampling,
channel concatenation and a few reductions. Every op records a ``Node`` on
its output; ``backward`` walks those nodes in reverse topological order.

Gradients are only computed for tensors that (transitively) require them,
so running the network with frozen weights and a trainable input skips all
kernel-gradient work.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


@dataclass
class Node:
    op: str
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    saved: dict = field(default_factory=dict)


class Tensor:
    """N x C x H x W array of 64-bit floats with an optional gradient buffer.

    Scalars (0-d) and bias vectors (1-d) are also allowed; they show up as
    loss values and conv biases.
    """

    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        backward(self)

    # a few operators so regularizer expressions read naturally
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def _make(data: np.ndarray, op: str, inputs: tuple[Tensor, ...], bwd, **saved) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, inputs, bwd, saved)
    return out


def _as4d(t: Tensor, op: str) -> None:
    if t.data.ndim != 4:
        raise ShapeError(f"{op}: expected N x C x H x W input, got shape {t.shape}")


# ---------------------------------------------------------------------------
# convolution


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_direct(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Reference cross-correlation by explicit summation over kernel taps."""
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    xp = _pad(x, pad)
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, oc, i, j] = np.sum(patch * kernel[oc]) + bias[oc]
    return out


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    if stride > 1:
        win = win[:, :, ::stride, ::stride]
    return win  # (N, C, Ho, Wo, kh, kw)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation plus per-channel bias (im2col via strided views)."""
    _as4d(x, "conv2d")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (out, in, kh, kw), got {kernel.shape}")
    o, c, kh, kw = kernel.shape
    if x.shape[1] != c:
        raise ShapeError(f"conv2d: input {x.shape} has {x.shape[1]} channels but kernel {kernel.shape} expects {c}")
    if bias.shape != (o,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match kernel {kernel.shape}")
    if pad < 0 or stride < 1:
        raise ValueError(f"conv2d: need pad >= 0 and stride >= 1, got pad={pad} stride={stride}")
    n, _, h, w = x.shape
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"conv2d: input {x.shape} (pad {pad}) smaller than kernel {kernel.shape}")

    xp = _pad(x.data, pad)
    win = _windows(xp, kh, kw, stride)
    ho, wo = win.shape[2], win.shape[3]
    out = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
    out = out.transpose(0, 3, 1, 2) + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def bwd(g: np.ndarray):
        gx = gk = gb = None
        if kernel.requires_grad:
            gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            cols = np.tensordot(g, kernel.data, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx, gk, gb

    return _make(out, "conv2d", (x, kernel, bias), bwd, stride=stride, pad=pad)


# ---------------------------------------------------------------------------
# pointwise and structural ops


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def bwd(g):
        return (np.where(pos, g, slope * g),)

    return _make(out, "leaky_relu", (x,), bwd, slope=slope)


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping 2x2 max; ties go to the first element in row-major order."""
    if window != 2:
        raise ValueError("only 2x2 max pooling is supported")
    _as4d(x, "maxpool2d")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d: spatial dims must be even, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)  # argmax returns the first maximum
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        onehot = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(onehot, idx[..., None], g[..., None], axis=-1)
        gx = onehot.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return _make(out, "maxpool2d", (x,), bwd, argmax=idx)


def upsample_nearest2x(x: Tensor) -> Tensor:
    _as4d(x, "upsample_nearest2x")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def bwd(g):
        n, c, h, w = g.shape
        return (g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)

    return _make(out, "upsample_nearest2x", (x,), bwd)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _as4d(a, "concat_channels")
    _as4d(b, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: cannot stack {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def bwd(g):
        return g[:, :ca], g[:, ca:]

    return _make(out, "concat_channels", (a, b), bwd)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def scale(a: Tensor, factor: float) -> Tensor:
    return _make(a.data * factor, "scale", (a,), lambda g: (g * factor,))


def sum_all(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum()), "sum", (a,), lambda g: (np.full(a.shape, float(g)),))


def sum_squares(a: Tensor) -> Tensor:
    """Squared L2 norm over every entry."""
    val = np.asarray(np.sum(a.data * a.data))
    return _make(val, "sum_squares", (a,), lambda g: (2.0 * float(g) * a.data,))


def inner(a: Tensor, const: np.ndarray) -> Tensor:
    """<a, const> for a constant array; handy for probing Jacobians."""
    const = np.asarray(const, dtype=np.float64)
    if const.shape != a.shape:
        raise ShapeError(f"inner: shape mismatch {a.shape} vs {const.shape}")
    return _make(np.asarray(np.sum(a.data * const)), "inner", (a,), lambda g: (float(g) * const,))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _same_shape(pred, target, "mse_loss")
    diff = pred.data - target.data
    n = diff.size

    def bwd(g):
        gp = (2.0 * float(g) / n) * diff
        return gp, -gp

    return _make(np.asarray(np.mean(diff * diff)), "mse_loss", (pred, target), bwd)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    Accumulation is additive: calling this twice without ``zero_grad`` doubles
    the stored gradients.
    """
    if root.data.size != 1 or root.data.ndim > 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for t in reversed(_topo_order(root)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            _check_finite(g, "backward")
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_update(
    weights: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam step, applied in place to ``weights``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, w in weights.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(w)
            v = np.zeros_like(w)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return weights
