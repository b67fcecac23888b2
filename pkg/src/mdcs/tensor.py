"""Dense float64 tensors with a recording tape for reverse-mode differentiation.

Every operation in this module records itself on the innermost active
:class:`Tape`.  Calling :meth:`Tape.backward` walks the records in reverse and
accumulates ``dL/dx`` into ``.grad`` of every leaf that requires gradients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_ACTIVE_TAPES: list["Tape"] = []


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A float64 array plus an optional gradient buffer.

    ``data`` is not copied when it is already a float64 array.  Extended
    precision (``np.longdouble``) input is kept as is; it exists so that
    finite-difference oracles can run below float64 roundoff.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != np.longdouble:
            arr = arr.astype(np.float64, copy=False)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


@dataclass
class _Record:
    inputs: tuple[Tensor, ...]
    outputs: tuple[Tensor, ...]
    # called with one upstream gradient per output (zeros for outputs that
    # received none), returns one gradient per input
    backward: Callable[..., Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered list of recorded operations.

    Records are appended as operations execute, so each record's inputs were
    produced by an earlier record or are leaves: the list is already in
    topological order.
    """

    records: list[_Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def _record(inputs: tuple[Tensor, ...], output: Tensor, rule) -> Tensor:
    record_multi(inputs, (output,), rule)
    return output


def record_multi(inputs: tuple[Tensor, ...], outputs: tuple[Tensor, ...], rule) -> None:
    """Record an operation with several outputs on the active tape."""
    if _ACTIVE_TAPES and any(t.requires_grad for t in inputs):
        for out in outputs:
            out.requires_grad = True
        _ACTIVE_TAPES[-1].records.append(_Record(inputs, outputs, rule))


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf on ``tape`` with ``dL/dleaf``.

    Gradients add onto whatever is already stored in ``.grad``, so calling
    this twice without :meth:`Tensor.zero_grad` accumulates.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(out) for r in tape.records for out in r.outputs}
    upstream: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss

    for rec in reversed(tape.records):
        gs = [upstream.pop(id(out), None) for out in rec.outputs]
        if all(g is None for g in gs):
            continue
        gs = [np.zeros_like(out.data) if g is None else g for out, g in zip(rec.outputs, gs)]
        grads = rec.backward(*gs)
        for inp, gi in zip(rec.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in upstream:
                upstream[key] = upstream[key] + gi
            else:
                upstream[key] = gi
            if key not in produced:
                leaves[key] = inp

    for key, leaf in leaves.items():
        g = upstream.get(key)
        if g is None:
            continue
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# --------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data + b.data)
    return _record((a, b), out, lambda g: (g, g))


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every element of ``x`` by the single-element tensor ``s``."""
    if s.size != 1:
        raise ShapeError(f"scale: factor must have one element, got {s.shape}")
    factor = s.data[0]
    out = Tensor(factor * x.data)

    def rule(g):
        return g * factor, np.array([np.sum(g * x.data)])

    return _record((x, s), out, rule)


def tensor_sum(x: Tensor) -> Tensor:
    out = Tensor(np.sum(x.data))
    return _record((x,), out, lambda g: (np.full_like(x.data, g[0]),))


def weighted_sum(x: Tensor, weights) -> Tensor:
    """``sum(x * weights)`` for a constant array of weights."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights {w.shape} vs input {x.shape}")
    out = Tensor(np.sum(x.data * w))
    return _record((x,), out, lambda g: (g[0] * w,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    return _record((x,), out, lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor) -> Tensor:
    """Collapse all trailing dimensions: [B, ...] -> [B, F]."""
    return reshape(x, (x.shape[0], -1))


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two [B, F] tensors along the feature axis."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    split = a.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1))
    return _record((a, b), out, lambda g: (g[:, :split], g[:, split:]))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    return _record((x,), out, lambda g: (np.where(mask, g, 0.0),))


# --------------------------------------------------------------------------
# layers


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map per row: ``x @ weights.T + bias``."""
    if x.data.ndim != 2:
        raise ShapeError(f"dense: input must be [B, F], got {x.shape}")
    f_out, f_in = weights.shape
    if x.shape[1] != f_in or bias.shape != (f_out,):
        raise ShapeError(
            f"dense: input {x.shape}, weights {weights.shape}, bias {bias.shape}"
        )
    out = Tensor(x.data @ weights.data.T + bias.data)

    def rule(g):
        return g @ weights.data, g.T @ x.data, g.sum(axis=0)

    return _record((x, weights, bias), out, rule)


def separable_conv2d(
    x: Tensor, depthwise: Tensor, pointwise: Tensor, bias: Tensor
) -> Tensor:
    """Depthwise k x k convolution followed by a 1 x 1 pointwise mix.

    Zero same-padding, stride 1.  Shapes: ``x`` [B,C,H,W], ``depthwise``
    [C,k,k], ``pointwise`` [C_out,C], ``bias`` [C_out].
    """
    if x.data.ndim != 4:
        raise ShapeError(f"separable_conv2d: input must be [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    if depthwise.data.ndim != 3 or depthwise.shape[0] != c:
        raise ShapeError(
            f"separable_conv2d: input has {c} channels but depthwise kernels are {depthwise.shape}"
        )
    k = depthwise.shape[1]
    if depthwise.shape[2] != k or k % 2 == 0:
        raise ShapeError(f"separable_conv2d: kernel must be odd and square, got {depthwise.shape}")
    if pointwise.data.ndim != 2 or pointwise.shape[1] != c:
        raise ShapeError(
            f"separable_conv2d: pointwise kernels {pointwise.shape} do not take {c} channels"
        )
    c_out = pointwise.shape[0]
    if bias.shape != (c_out,):
        raise ShapeError(f"separable_conv2d: bias {bias.shape} does not match {c_out} outputs")

    p = k // 2
    xpad = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    kern = depthwise.data
    mid = np.zeros_like(x.data)
    for u in range(k):
        for v in range(k):
            mid += kern[None, :, u, v, None, None] * xpad[:, :, u : u + h, v : v + w]
    out = np.einsum("oc,bchw->bohw", pointwise.data, mid, optimize=True)
    out += bias.data[None, :, None, None]
    result = Tensor(out)

    def rule(g):
        g_bias = g.sum(axis=(0, 2, 3))
        g_point = np.einsum("bohw,bchw->oc", g, mid, optimize=True)
        g_mid = np.einsum("oc,bohw->bchw", pointwise.data, g, optimize=True)
        g_kern = np.empty_like(kern)
        g_xpad = np.zeros_like(xpad)
        for u in range(k):
            for v in range(k):
                window = xpad[:, :, u : u + h, v : v + w]
                g_kern[:, u, v] = np.einsum("bchw,bchw->c", g_mid, window, optimize=True)
                g_xpad[:, :, u : u + h, v : v + w] += kern[None, :, u, v, None, None] * g_mid
        g_x = g_xpad[:, :, p : p + h, p : p + w]
        return g_x, g_kern, g_point, g_bias

    return _record((x, depthwise, pointwise, bias), result, rule)


def maxpool2d(x: Tensor) -> Tensor:
    """2 x 2 max pooling, stride 2.

    Backward routes each window's gradient to its argmax; on ties the first
    element in row-major scan order wins.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d: input must be [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d: spatial dims must be even, got {h}x{w}")
    windows = (
        x.data.reshape(b, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h // 2, w // 2, 4)
    )
    # np.argmax returns the first maximal index, which is the tie rule we want.
    arg = np.argmax(windows, axis=-1)
    out = Tensor(np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0])

    def rule(g):
        routed = np.zeros((b, c, h // 2, w // 2, 4))
        np.put_along_axis(routed, arg[..., None], g[..., None], axis=-1)
        g_x = (
            routed.reshape(b, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h, w)
        )
        return (g_x,)

    return _record((x,), out, rule)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be [B,2], got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"softmax_cross_entropy: {labels.shape[0] if labels.ndim else 0} labels "
            f"for {logits.shape[0]} rows"
        )
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError(f"softmax_cross_entropy: labels must be 0 or 1, got {np.unique(labels)}")
    labels = labels.astype(np.int64)
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    nll = log_z - shifted[np.arange(n), labels]
    out = Tensor(nll.mean())

    def rule(g):
        probs = softmax(logits.data)
        probs[np.arange(n), labels] -= 1.0
        return (probs * (g[0] / n),)

    return _record((logits,), out, rule)


# --------------------------------------------------------------------------
# finite differences


def finite_difference_grad(
    f: Callable[[], float], x: Tensor, h: float = 1e-6, indices=None
) -> np.ndarray:
    """Central-difference gradient of the scalar ``f()`` with respect to ``x``.

    ``f`` is re-evaluated with ``x.data`` perturbed in place; the original
    values are restored afterwards.  ``indices`` restricts the check to a
    subset of flat positions (the others are left at zero).
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    flat = x.data.reshape(-1)
    grad = np.zeros(flat.size)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f()
        flat[i] = orig - h
        f_minus = f()
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2 * h)
    return grad.reshape(x.shape)


def relative_error(analytic, numeric) -> float:
    """``||a - n|| / max(||a||, ||n||)`` over a whole gradient block; 0 if both vanish.

    For a single scalar this is the usual ``|a - n| / max(|a|, |n|)``.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)
