"""Tape-based reverse-mode autodiff over dense numpy arrays.

Every primitive returns a new Tensor carrying a backward closure that maps
the incoming cotangent to one gradient per parent. ``backward(loss)`` walks
the graph in reverse topological order, accumulates interior gradients in a
scratch table, and deposits gradients permanently only on leaves that
require them. Gradient reset is explicit and caller-driven.

Default dtype is float32. Arrays that arrive as float64 stay float64, so
the same graph code can run in double precision (the finite-difference
gradient checks rely on this).
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class ShapeError(ValueError):
    """Operands do not conform; message names both shapes."""


class NumericError(ArithmeticError):
    """An operation produced NaN or Inf."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (e.g. non-scalar loss)."""


_strict_finite = True
_grad_enabled = True


def set_strict_finite(enabled: bool) -> None:
    """Toggle the NaN/Inf check applied to every primitive output."""
    global _strict_finite
    _strict_finite = bool(enabled)


def strict_finite_enabled() -> bool:
    return _strict_finite


@contextmanager
def no_grad():
    """Skip graph recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype == np.float64:
        return arr
    return arr.astype(np.float32, copy=False)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not _strict_finite:
        return
    # one fused same-dtype pass: any NaN/Inf poisons the sum; legitimate
    # activations are orders of magnitude below float32 overflow
    if not np.isfinite(arr.sum()):
        raise NumericError(f"{op} produced non-finite values")


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode AD."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._bwd: Callable[[np.ndarray], tuple] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"


class Parameter:
    """Named trainable leaf; the gradient lives on the wrapped tensor."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, data):
        self.name = name
        self.value = Tensor(data, requires_grad=True, name=name)

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @data.setter
    def data(self, arr: np.ndarray) -> None:
        self.value.data = _as_array(arr)

    @property
    def grad(self) -> np.ndarray | None:
        return self.value.grad

    def zero_grad(self) -> None:
        self.value.zero_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._bwd is not None


def _make(data: np.ndarray, parents: tuple[Tensor, ...], bwd, op: str) -> Tensor:
    if _grad_enabled:
        # inference paths skip per-op checks; NaN/Inf propagates to the
        # outputs, which the scoring entry points validate
        _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.name = None
    if bwd is not None and _grad_enabled and any(_tracked(p) for p in parents):
        out._parents = parents
        out._bwd = bwd
    else:
        out._parents = ()
        out._bwd = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product.

    Either both operands carry identical batch dimensions, or ``b`` is a
    plain matrix applied to every row of ``a`` (the linear-layer case).
    """
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes do not conform: {a.shape} @ {b.shape}")
    if a.data.ndim == b.data.ndim:
        if a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(
                f"matmul batch dimensions differ: {a.shape} @ {b.shape}"
            )
        out = a.data @ b.data

        def bwd(g: np.ndarray):
            return (
                g @ np.swapaxes(b.data, -1, -2),
                np.swapaxes(a.data, -1, -2) @ g,
            )

    elif b.data.ndim == 2:
        # one large GEMM beats numpy's batched loop over leading dims
        k, n = b.shape
        lead = a.shape[:-1]
        out = (a.data.reshape(-1, k) @ b.data).reshape(*lead, n)

        def bwd(g: np.ndarray):
            g2 = g.reshape(-1, n)
            return (
                (g2 @ b.data.T).reshape(a.shape),
                a.data.reshape(-1, k).T @ g2,
            )

    else:
        raise ShapeError(f"matmul shapes do not conform: {a.shape} @ {b.shape}")

    return _make(out, (a, b), bwd, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add shapes do not broadcast: {a.shape} + {b.shape}") from exc

    def bwd(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bwd, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul shapes do not broadcast: {a.shape} * {b.shape}") from exc

    def bwd(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bwd, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    f = float(factor)

    def bwd(g: np.ndarray):
        return (g * f,)

    return _make(a.data * f, (a,), bwd, "scale")


def embedding_gather(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"id out of range for embedding table of {table.shape[0]} rows")
    out = table.data[ids]

    def bwd(g: np.ndarray):
        acc = np.zeros_like(table.data)
        np.add.at(acc, ids, g)
        return (acc,)

    return _make(out, (table,), bwd, "embedding-gather")


def take_rows(a: Tensor, rows: np.ndarray) -> Tensor:
    """Gather rows of a 2-d tensor; backward scatter-adds."""
    rows = np.asarray(rows)
    out = a.data[rows]

    def bwd(g: np.ndarray):
        acc = np.zeros_like(a.data)
        np.add.at(acc, rows, g)
        return (acc,)

    return _make(out, (a,), bwd, "take-rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply the affine."""
    h = x.shape[-1]
    if gain.shape != (h,) or bias.shape != (h,):
        raise ShapeError(
            f"layer-norm affine shapes {gain.shape}/{bias.shape} do not match width {h}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g: np.ndarray):
        gx = g * gain.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        return (
            inv * (gx - m1 - xhat * m2),
            _unbroadcast(g * xhat, gain.shape),
            _unbroadcast(g, bias.shape),
        )

    return _make(out, (x, gain, bias), bwd, "layer-norm")


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation; in-place chain keeps the temporaries down."""
    d = x.data
    t = d * d
    t *= _GELU_A
    t += 1.0
    t *= d  # x + a*x^3
    t *= _GELU_C
    np.tanh(t, out=t)
    out = t + 1.0
    out *= d
    out *= 0.5

    def bwd(g: np.ndarray):
        du = d * d
        du *= 3.0 * _GELU_A
        du += 1.0
        du *= _GELU_C
        du *= 1.0 - t * t
        du *= d
        du += 1.0 + t
        du *= 0.5
        du *= g
        return (du,)

    return _make(out, (x,), bwd, "gelu")


def _softmax_data(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    p = _softmax_data(x.data)

    def bwd(g: np.ndarray):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _make(p, (x,), bwd, "softmax")


def masked_softmax(x: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis with masked lanes forced to exactly 0.

    ``mask`` broadcasts against ``x``; 1 keeps a lane, 0 drops it. Rows with
    no unmasked lane come out all-zero.
    """
    keep = np.asarray(mask, dtype=x.data.dtype)
    z = np.where(keep > 0, x.data, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)  # fully-masked rows
    with np.errstate(invalid="ignore"):
        e = np.exp(z - zmax)
    e = np.where(keep > 0, e, 0.0)  # exact zeros on masked lanes
    denom = e.sum(axis=-1, keepdims=True)
    p = e / np.where(denom == 0.0, 1.0, denom)

    def bwd(g: np.ndarray):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _make(p, (x,), bwd, "masked-softmax")


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer targets against rows of logits."""
    targets = np.asarray(targets)
    if logits.data.ndim != 2 or targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross-entropy expects (n, v) logits with (n,) targets, "
            f"got {logits.shape} and {targets.shape}"
        )
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    picked = z[np.arange(n), targets]
    out = np.asarray((lse - picked).mean(), dtype=logits.data.dtype)

    def bwd(g: np.ndarray):
        p = _softmax_data(logits.data)
        p[np.arange(n), targets] -= 1.0
        return (p * (g / n),)

    return _make(out, (logits,), bwd, "cross-entropy")


def mean_squared_error(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)
    n = pred.data.size

    def bwd(g: np.ndarray):
        gd = (2.0 / n) * diff * g
        return gd, -gd

    return _make(out, (pred, target), bwd, "mean-squared-error")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bwd(g: np.ndarray):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bwd, "concat")


def slice_axis(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx]

    def bwd(g: np.ndarray):
        acc = np.zeros_like(a.data)
        acc[idx] = g
        return (acc,)

    return _make(out, (a,), bwd, "slice")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g: np.ndarray):
        return (g.reshape(a.shape),)

    return _make(out, (a,), bwd, "reshape")


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    inv = tuple(np.argsort(axes))

    def bwd(g: np.ndarray):
        return (np.ascontiguousarray(np.transpose(g, inv)),)

    return _make(out, (a,), bwd, "transpose")


_PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "scale": scale,
    "embedding-gather": embedding_gather,
    "layer-norm": layer_norm,
    "gelu": gelu,
    "softmax": softmax,
    "masked-softmax": masked_softmax,
    "cross-entropy": cross_entropy,
    "mean-squared-error": mean_squared_error,
    "concat": concat,
    "slice": slice_axis,
}


def primitive_forward(op_kind: str, *inputs) -> Tensor:
    """Dispatch one named primitive; record the node for backward()."""
    try:
        fn = _PRIMITIVES[op_kind]
    except KeyError:
        raise ValueError(
            f"unknown op-kind {op_kind!r}; expected one of {sorted(_PRIMITIVES)}"
        ) from None
    return fn(*inputs)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Repeated calls without an intervening reset keep accumulating.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    scratch: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = scratch.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.accumulate_grad(g)
        if node._bwd is None:
            continue
        for parent, pg in zip(node._parents, node._bwd(g)):
            if pg is None or not _tracked(parent):
                continue
            cur = scratch.get(id(parent))
            scratch[id(parent)] = pg if cur is None else cur + pg
