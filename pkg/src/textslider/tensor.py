"""
Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation appends a :class:`TapeNode` to the tape that
is active on the current thread.  :func:`backward` walks that tape once, in
reverse append order, and deposits gradients on the leaf tensors that asked
for them.  The tape is cleared afterwards, so each training step starts from
an empty graph.

Storage is numpy.  The dtype follows the inputs (float32 unless a caller
deliberately builds float64 tensors, which the gradient checker does).
Reductions that feed oracle comparisons run sequentially over the reduction
axis so results are reproducible bit for bit.

Example
-------
>>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
>>> loss = tsum(x * x)
>>> backward(loss)
>>> x.grad
array([2., 4., 6.], dtype=float32)
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError, NumericalError

__all__ = [
    "Tensor",
    "Tape",
    "TapeNode",
    "active_tape",
    "backward",
    "matmul",
    "add",
    "sub",
    "scale",
    "mul",
    "gelu",
    "softmax_lastdim",
    "layernorm",
    "concat_lastdim",
    "slice_rows",
    "gather_rows",
    "transpose",
    "reshape",
    "mask_fill",
    "mse",
    "tsum",
    "causal_attention",
    "override_backward",
    "set_debug",
]

LAYERNORM_EPS = 1e-5
MASK_VALUE = -1e9

_debug = False


def set_debug(enabled: bool) -> None:
    """Turn the post-operation finiteness check on or off."""
    global _debug
    _debug = bool(enabled)


class Tensor:
    """A dense array plus an optional gradient accumulator.

    The data array is read-only; operations always produce new tensors.
    Optimizers update parameters by rebinding ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data: Any, requires_grad: bool = False, dtype=None, name: str | None = None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype == np.float64 else np.float32
        arr = np.array(data, dtype=dtype, copy=True)
        if 0 in arr.shape:
            raise ContractError(f"tensor extents must be positive, got {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: TapeNode | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr)
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(like.shape, x, dtype=like.dtype))


# ---------------------------------------------------------------------------
# Tape


@dataclass
class TapeNode:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    saved: dict[str, Any] = field(default_factory=dict)


class Tape:
    """Append-only record of the forward computation.

    Use as a context manager to make it the active tape for the current
    thread; otherwise operations record onto a per-thread default tape.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()


_local = threading.local()


def _stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = [Tape()]
    return stack


def active_tape() -> Tape:
    return _stack()[-1]


_BACKWARD: dict[str, Callable[[TapeNode, np.ndarray], Sequence[np.ndarray | None]]] = {}


def _rule(op: str):
    def register(fn):
        _BACKWARD[op] = fn
        return fn

    return register


@contextlib.contextmanager
def override_backward(op: str, fn) -> Iterator[None]:
    """Temporarily replace the backward rule of ``op``.

    Intended for negative controls: a gradient check run under a corrupted
    rule must fail.
    """
    if op not in _BACKWARD:
        raise ContractError(f"unknown op {op!r}")
    saved = _BACKWARD[op]
    _BACKWARD[op] = fn
    try:
        yield
    finally:
        _BACKWARD[op] = saved


def _emit(op: str, arr: np.ndarray, inputs: Sequence[Tensor], **saved) -> Tensor:
    if _debug and not np.all(np.isfinite(arr)):
        raise NumericalError(f"{op} produced a non-finite value")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(arr, needs)
    if needs:
        node = TapeNode(op, tuple(inputs), out, saved)
        out._node = node
        active_tape().record(node)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    Gradients accumulate into existing ``grad`` arrays.  The active tape is
    cleared on return.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = active_tape()
    if not tape.nodes:
        return
    if loss._node is None:
        tape.clear()
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    try:
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = _BACKWARD[node.op](node, g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    inp.grad = gi.astype(inp.dtype, copy=True) if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    grads[key] = gi if key not in grads else grads[key] + gi
    finally:
        tape.clear()


# ---------------------------------------------------------------------------
# Kernels


def _seq_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # (k, m, n) products reduced over the outermost axis: each output element
    # is accumulated in order p = 0, 1, ..., k-1.
    prod = a.T[:, :, None] * b[:, None, :]
    return np.add.reduce(prod, axis=0)


def _seq_rowsum(x: np.ndarray) -> np.ndarray:
    return np.add.reduce(x.reshape(-1, x.shape[-1]), axis=0)


# ---------------------------------------------------------------------------
# Operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _emit("matmul", _seq_matmul(a.data, b.data), (a, b))


@_rule("matmul")
def _matmul_bw(node, g):
    a, b = node.inputs
    ga = _seq_matmul(g, b.data.T) if a.requires_grad else None
    gb = _seq_matmul(a.data.T, g) if b.requires_grad else None
    return ga, gb


def _check_add(a: Tensor, b: Tensor, op: str) -> bool:
    if a.shape == b.shape:
        return False
    if b.data.ndim == 1 and a.shape[-1:] == b.shape:
        return True
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a vector added to every row of ``a``."""
    bias = _check_add(a, b, "add")
    return _emit("add", a.data + b.data, (a, b), bias=bias)


@_rule("add")
def _add_bw(node, g):
    return g, (_seq_rowsum(g) if node.saved["bias"] else g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bias = _check_add(a, b, "sub")
    return _emit("sub", a.data - b.data, (a, b), bias=bias)


@_rule("sub")
def _sub_bw(node, g):
    return g, -(_seq_rowsum(g) if node.saved["bias"] else g)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    if math.isnan(c):
        raise ContractError("scale factor is NaN")
    return _emit("scale", x.data * x.dtype.type(c), (x,), c=c)


@_rule("scale")
def _scale_bw(node, g):
    return (g * g.dtype.type(node.saved["c"]),)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    return _emit("mul", a.data * b.data, (a, b))


@_rule("mul")
def _mul_bw(node, g):
    a, b = node.inputs
    return g * b.data, g * a.data


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    d = x.data
    cdf = 0.5 * (1.0 + erf(d * _INV_SQRT2))
    return _emit("gelu", (d * cdf).astype(x.dtype), (x,), cdf=cdf)


@_rule("gelu")
def _gelu_bw(node, g):
    d = node.inputs[0].data
    pdf = np.exp(-0.5 * d * d) * _INV_SQRT2PI
    return ((g * (node.saved["cdf"] + d * pdf)).astype(g.dtype),)


def softmax_lastdim(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(d - d.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    return _emit("softmax", y, (x,), y=y)


@_rule("softmax")
def _softmax_bw(node, g):
    y = node.saved["y"]
    return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(f"layernorm: gain {gain.shape} / bias {bias.shape} do not match last extent {n}")
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    centered = d - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + d.dtype.type(eps))
    xhat = centered * inv
    return _emit("layernorm", xhat * gain.data + bias.data, (x, gain, bias), xhat=xhat, inv=inv)


@_rule("layernorm")
def _layernorm_bw(node, g):
    x, gain, bias = node.inputs
    xhat, inv = node.saved["xhat"], node.saved["inv"]
    gx = None
    if x.requires_grad:
        dxhat = g * gain.data
        gx = inv * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
    ggain = _seq_rowsum(g * xhat) if gain.requires_grad else None
    gbias = _seq_rowsum(g) if bias.requires_grad else None
    return gx, ggain, gbias


def concat_lastdim(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_lastdim needs at least one tensor")
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise DimensionError(f"concat_lastdim: leading extents differ ({parts[0].shape} vs {p.shape})")
    widths = [p.shape[-1] for p in parts]
    return _emit("concat", np.concatenate([p.data for p in parts], axis=-1), parts, widths=widths)


@_rule("concat")
def _concat_bw(node, g):
    out, start = [], 0
    for w in node.saved["widths"]:
        out.append(g[..., start : start + w])
        start += w
    return out


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[0]:
        raise DimensionError(f"slice_rows: [{start}:{stop}] out of range for {x.shape}")
    return _emit("slice_rows", x.data[start:stop].copy(), (x,), start=start, stop=stop)


@_rule("slice_rows")
def _slice_rows_bw(node, g):
    x = node.inputs[0]
    full = np.zeros_like(x.data)
    full[node.saved["start"] : node.saved["stop"]] = g
    return (full,)


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Embedding lookup: row ``ids[i]`` of ``table`` becomes output row ``i``."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1 or table.data.ndim != 2:
        raise DimensionError(f"gather_rows: table {table.shape}, ids of shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError(f"gather_rows: id out of range for table with {table.shape[0]} rows")
    return _emit("gather_rows", table.data[idx], (table,), idx=idx)


@_rule("gather_rows")
def _gather_rows_bw(node, g):
    full = np.zeros_like(node.inputs[0].data)
    np.add.at(full, node.saved["idx"], g)
    return (full,)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {x.shape}")
    return _emit("transpose", np.ascontiguousarray(x.data.T), (x,))


@_rule("transpose")
def _transpose_bw(node, g):
    return (np.ascontiguousarray(g.T),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    return _emit("reshape", x.data.reshape(shape).copy(), (x,), shape=x.shape)


@_rule("reshape")
def _reshape_bw(node, g):
    return (g.reshape(node.saved["shape"]),)


def mask_fill(x: Tensor, mask: np.ndarray, value: float = MASK_VALUE) -> Tensor:
    """Replace entries where ``mask`` is true by a constant; they get no gradient."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"mask_fill: mask {mask.shape} vs tensor {x.shape}")
    return _emit("mask_fill", np.where(mask, x.dtype.type(value), x.data), (x,), mask=mask)


@_rule("mask_fill")
def _mask_fill_bw(node, g):
    return (np.where(node.saved["mask"], g.dtype.type(0), g),)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences over all elements, as a scalar tensor."""
    if a.shape != b.shape:
        raise DimensionError(f"mse: incompatible shapes {a.shape} and {b.shape}")
    diff = a.data - b.data
    return _emit("mse", np.asarray((diff * diff).mean(), dtype=a.dtype), (a, b), diff=diff)


@_rule("mse")
def _mse_bw(node, g):
    diff = node.saved["diff"]
    ga = diff * (g * diff.dtype.type(2.0 / diff.size))
    return ga, -ga


def tsum(x: Tensor) -> Tensor:
    return _emit("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,))


@_rule("sum")
def _sum_bw(node, g):
    return (np.full(node.inputs[0].shape, g, dtype=g.dtype),)


def causal_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int, causal: bool = True) -> Tensor:
    """Multi-head scaled dot-product attention over one sequence.

    ``q``, ``k`` and ``v`` are ``[L, d]``; heads split the last axis evenly.
    Built from primitive ops, so its gradient comes for free.
    """
    seq_len, width = q.shape
    if k.shape != q.shape or v.shape != q.shape:
        raise DimensionError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    if width % n_heads:
        raise DimensionError(f"attention: width {width} not divisible by {n_heads} heads")
    dh = width // n_heads
    qt, kt, vt = transpose(q), transpose(k), transpose(v)
    mask = np.triu(np.ones((seq_len, seq_len), dtype=bool), k=1) if causal else None
    heads = []
    for h in range(n_heads):
        lo, hi = h * dh, (h + 1) * dh
        scores = scale(matmul(transpose(slice_rows(qt, lo, hi)), slice_rows(kt, lo, hi)), 1.0 / math.sqrt(dh))
        if mask is not None:
            scores = mask_fill(scores, mask)
        heads.append(matmul(softmax_lastdim(scores), transpose(slice_rows(vt, lo, hi))))
    return heads[0] if n_heads == 1 else concat_lastdim(heads)
