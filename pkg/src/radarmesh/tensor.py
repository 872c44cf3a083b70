"""Reverse-mode autodiff over dense float arrays.

Exactly the operations the reconstruction pipeline needs, nothing more.
Graphs are define-by-run: every op returns a fresh :class:`Array` holding
references to its parents and a closure that maps the upstream gradient to
parent gradients. Forward and backward run in float32 in production; the
same code path runs in float64 when the finite-difference checker replays a
graph (ops follow the dtype of their inputs).

Deliberate restrictions, to keep shape bugs loud:

* no general broadcasting -- elementwise ops require equal shapes, a scalar,
  or a 1-D operand matching the last axis (the affine gain/bias case),
* matmul is strictly 2-D,
* every op validates that its output is finite and raises ``GraphError``
  naming the op otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Array",
    "GraphError",
    "ShapeError",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "narrow",
    "take",
    "relu",
    "absolute",
    "sigmoid",
    "softmax",
    "layer_norm",
    "conv2d",
    "segment_max",
    "mask_rows",
    "stop_grad",
    "sum_all",
    "mean_all",
    "mean_axis",
    "backward",
    "AdamState",
    "adam_step",
]


class GraphError(RuntimeError):
    """Raised when a graph is structurally unusable (non-finite values, non-scalar loss)."""


class ShapeError(ValueError):
    """Raised when operand shapes violate an op contract."""


def _as_float(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float32)
    return arr


class Array:
    """A dense float array node in a define-by-run graph.

    ``data`` is float32 (or float64 during checker replays), row-major.
    ``grad`` is only populated on ``requires_grad`` leaves, by
    :func:`backward`, and accumulates across backward calls until cleared.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), grad_fn=None):
        self.data = _as_float(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self.parents = parents
        self._grad_fn = grad_fn
        if not np.isfinite(self.data).all():
            raise GraphError(f"non-finite values produced by op '{op}'")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Array(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def constant(data) -> Array:
    return Array(data, requires_grad=False, op="constant")


def parameter(data) -> Array:
    return Array(data, requires_grad=True, op="parameter")


def _node(data, op: str, parents: tuple[Array, ...], grad_fn) -> Array:
    """Create a result node; collapse to a constant when no parent needs grad."""
    if any(p.requires_grad for p in parents):
        return Array(data, requires_grad=True, op=op, parents=parents, grad_fn=grad_fn)
    return Array(data, requires_grad=False, op=op)


def _affine_mode(a: Array, b: Array, op: str) -> str:
    """Classify an elementwise pairing: equal shapes, scalar, or last-axis 1-D."""
    if a.shape == b.shape:
        return "same"
    if b.data.ndim == 0 or b.size == 1:
        return "scalar"
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "lastaxis"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(b_shape, mode: str, g: np.ndarray) -> np.ndarray:
    if mode == "same":
        return g
    if mode == "scalar":
        return g.sum().reshape(b_shape)
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def add(a: Array, b: Array) -> Array:
    mode = _affine_mode(a, b, "add")
    out = a.data + b.data

    def grad_fn(g):
        return (g if a.requires_grad else None,
                _reduce_to(b.shape, mode, g) if b.requires_grad else None)

    return _node(out, "add", (a, b), grad_fn)


def sub(a: Array, b: Array) -> Array:
    mode = _affine_mode(a, b, "sub")
    out = a.data - b.data

    def grad_fn(g):
        return (g if a.requires_grad else None,
                -_reduce_to(b.shape, mode, g) if b.requires_grad else None)

    return _node(out, "sub", (a, b), grad_fn)


def mul(a: Array, b: Array) -> Array:
    mode = _affine_mode(a, b, "mul")
    out = a.data * b.data

    def grad_fn(g):
        ga = g * b.data if a.requires_grad else None
        gb = _reduce_to(b.shape, mode, g * a.data) if b.requires_grad else None
        return (ga, gb)

    return _node(out, "mul", (a, b), grad_fn)


def scale(a: Array, s: float) -> Array:
    s = float(s)
    out = a.data * np.asarray(s, dtype=a.data.dtype)

    def grad_fn(g):
        return (g * np.asarray(s, dtype=g.dtype),)

    return _node(out, "scale", (a,), grad_fn)


def matmul(a: Array, b: Array) -> Array:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: operands must be 2-D, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return (ga, gb)

    return _node(out, "matmul", (a, b), grad_fn)


def transpose(a: Array) -> Array:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: operand must be 2-D, got {a.shape}")
    out = np.ascontiguousarray(a.data.T)

    def grad_fn(g):
        return (np.ascontiguousarray(g.T),)

    return _node(out, "transpose", (a,), grad_fn)


def reshape(a: Array, shape) -> Array:
    shape = tuple(int(s) for s in shape)
    out = a.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(a.shape),)

    return _node(out, "reshape", (a,), grad_fn)


def concat(parts, axis: int = 0) -> Array:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat: empty input")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        grads = []
        for i, p in enumerate(parts):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offsets[i], offsets[i + 1])
                grads.append(np.ascontiguousarray(g[tuple(sl)]))
            else:
                grads.append(None)
        return tuple(grads)

    return _node(out, "concat", tuple(parts), grad_fn)


def narrow(a: Array, start: int, stop: int, axis: int = 0) -> Array:
    """Contiguous slice along ``axis``; gradient zero-pads back."""
    if not (0 <= start <= stop <= a.shape[axis]):
        raise ShapeError(f"narrow: [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    out = np.ascontiguousarray(a.data[tuple(sl)])

    def grad_fn(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[tuple(sl)] = g
        return (full,)

    return _node(out, "narrow", (a,), grad_fn)


def take(a: Array, indices) -> Array:
    """Gather rows (axis 0); gradient scatter-adds into the source."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("take: indices must be 1-D")
    out = a.data[idx]

    def grad_fn(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _node(out, "take", (a,), grad_fn)


def relu(a: Array) -> Array:
    out = np.maximum(a.data, 0)
    mask = a.data > 0

    def grad_fn(g):
        return (g * mask,)

    return _node(out, "relu", (a,), grad_fn)


def absolute(a: Array) -> Array:
    out = np.abs(a.data)
    sgn = np.sign(a.data)

    def grad_fn(g):
        return (g * sgn,)

    return _node(out, "abs", (a,), grad_fn)


def sigmoid(a: Array) -> Array:
    x = np.clip(a.data, -80.0, 80.0)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _node(out, "sigmoid", (a,), grad_fn)


def softmax(a: Array, axis: int = -1) -> Array:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    # floor the exponent: contributions below e^-80 are zero at float32 and
    # letting exp underflow into subnormals stalls the whole pipeline
    np.maximum(shifted, -80.0, out=shifted)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _node(out, "softmax", (a,), grad_fn)


def layer_norm(a: Array, gain: Array, bias: Array, eps: float = 1e-5) -> Array:
    """Normalize the last axis to zero mean / unit (population) variance, then affine."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must be ({d},)")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=a.data.dtype))
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def grad_fn(g):
        gx = None
        if a.requires_grad:
            gh = g * gain.data
            # d/dx of (x - mu) * inv with mu, inv functions of the row
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xhat).mean(axis=-1, keepdims=True)
            gx = (gh - m1 - xhat * m2) * inv
        gg = (g * xhat).reshape(-1, d).sum(axis=0) if gain.requires_grad else None
        gb = g.reshape(-1, d).sum(axis=0) if bias.requires_grad else None
        return (gx, gg, gb)

    return _node(out, "layer_norm", (a, gain, bias), grad_fn)


# Cached gather indices for im2col, keyed by geometry.
_CONV_INDEX_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _conv_indices(c: int, h: int, w: int, kh: int, kw: int, stride: int):
    key = (c, h, w, kh, kw, stride)
    cached = _CONV_INDEX_CACHE.get(key)
    if cached is not None:
        return cached
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    ci = np.repeat(np.arange(c), kh * kw)
    ki, kj = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
    ki, kj = np.tile(ki.ravel(), c), np.tile(kj.ravel(), c)
    oi, oj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    rows = oi.ravel()[:, None] * stride + ki[None, :]
    cols = oj.ravel()[:, None] * stride + kj[None, :]
    chan = np.broadcast_to(ci[None, :], rows.shape)
    _CONV_INDEX_CACHE[key] = (chan, rows, cols)
    return chan, rows, cols


def conv2d(x: Array, k: Array, bias: Array | None = None,
           stride: int = 1, padding: int = 0) -> Array:
    """Valid cross-correlation of a (c,h,w) map with (o,c,kh,kw) kernels.

    Zero padding is applied symmetrically before the valid window sweep.
    """
    if x.data.ndim != 3 or k.data.ndim != 4:
        raise ShapeError(f"conv2d: need (c,h,w) input and (o,c,kh,kw) kernel, got {x.shape}, {k.shape}")
    c, h, w = x.shape
    o, kc, kh, kw = k.shape
    if kc != c:
        raise ShapeError(f"conv2d: channel mismatch, input {c} vs kernel {kc}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError("conv2d: kernel larger than padded input")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias must be ({o},)")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (padding, padding), (padding, padding)))
    ph, pw = xp.shape[1], xp.shape[2]
    oh = (ph - kh) // stride + 1
    ow = (pw - kw) // stride + 1
    chan, rows, cols = _conv_indices(c, ph, pw, kh, kw, stride)
    patches = xp[chan, rows, cols]                      # (oh*ow, c*kh*kw)
    kmat = k.data.reshape(o, -1)
    out = (patches @ kmat.T).T.reshape(o, oh, ow)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def grad_fn(g):
        gmat = g.reshape(o, -1)                         # (o, oh*ow)
        gk = (gmat @ patches).reshape(k.shape) if k.requires_grad else None
        gx = None
        if x.requires_grad:
            gpatches = gmat.T @ kmat                    # (oh*ow, c*kh*kw)
            gpad = np.zeros((c, ph, pw), dtype=g.dtype)
            np.add.at(gpad, (chan, rows, cols), gpatches)
            gx = gpad[:, padding:ph - padding, padding:pw - padding] if padding else gpad
            gx = np.ascontiguousarray(gx)
        gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(1, 2))
        return (gx, gk) if bias is None else (gx, gk, gb)

    parents = (x, k) if bias is None else (x, k, bias)
    return _node(out, "conv2d", parents, grad_fn)


def segment_max(values: Array, segment_ids, num_segments: int) -> Array:
    """Per-segment column-wise max of (n,d) rows; empty segments yield zeros.

    The gradient routes to the first row attaining each per-column max.
    """
    ids = np.asarray(segment_ids, dtype=np.int64)
    if values.data.ndim != 2 or ids.shape != (values.shape[0],):
        raise ShapeError("segment_max: need (n,d) values and (n,) segment ids")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise ShapeError("segment_max: segment ids out of range")
    n, d = values.shape
    out = np.full((num_segments, d), -np.inf, dtype=values.data.dtype)
    np.maximum.at(out, ids, values.data)
    empty = ~np.isin(np.arange(num_segments), ids)
    out[empty] = 0.0

    # First row index attaining the max for each (segment, column).
    hit = values.data == out[ids]
    row_idx = np.where(hit, np.arange(n)[:, None], n)
    first = np.full((num_segments, d), n, dtype=np.int64)
    np.minimum.at(first, ids, row_idx)

    def grad_fn(g):
        gv = np.zeros((n, d), dtype=g.dtype)
        seg_grid, col_grid = np.nonzero(first < n)
        gv[first[seg_grid, col_grid], col_grid] += g[seg_grid, col_grid]
        return (gv,)

    return _node(out, "segment_max", (values,), grad_fn)


def mask_rows(a: Array, keep) -> Array:
    """Zero whole rows of a 2-D array. Zeroed rows are literal 0.0 (no sign leak)."""
    keep = np.asarray(keep, dtype=bool)
    if a.data.ndim != 2 or keep.shape != (a.shape[0],):
        raise ShapeError("mask_rows: need (n,d) values and (n,) keep mask")
    out = a.data.copy()
    out[~keep] = 0.0

    def grad_fn(g):
        gv = g.copy()
        gv[~keep] = 0.0
        return (gv,)

    return _node(out, "mask_rows", (a,), grad_fn)


def stop_grad(a: Array) -> Array:
    return Array(a.data, requires_grad=False, op="stop_grad")


def sum_all(a: Array) -> Array:
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def grad_fn(g):
        return (np.full(a.shape, g, dtype=g.dtype),)

    return _node(out, "sum", (a,), grad_fn)


def mean_all(a: Array) -> Array:
    out = np.asarray(a.data.mean(), dtype=a.data.dtype)
    inv = 1.0 / a.size

    def grad_fn(g):
        return (np.full(a.shape, g * np.asarray(inv, dtype=g.dtype), dtype=g.dtype),)

    return _node(out, "mean", (a,), grad_fn)


def mean_axis(a: Array, axis: int = 0) -> Array:
    out = a.data.mean(axis=axis)
    n = a.shape[axis]

    def grad_fn(g):
        expanded = np.expand_dims(g, axis) / np.asarray(n, dtype=g.dtype)
        return (np.broadcast_to(expanded, a.shape).copy(),)

    return _node(out, "mean_axis", (a,), grad_fn)


def backward(loss: Array) -> None:
    """Reverse-mode pass from a scalar loss.

    Accumulates into ``grad`` on every ``requires_grad`` leaf. Calling twice
    on the same graph without clearing doubles the leaf gradients.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")

    topo: list[Array] = []
    seen: set[int] = set()
    stack: list[tuple[Array, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   t=0)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, in place; returns (params, state)."""
    state.t += 1
    t = state.t
    bc1 = np.float32(1.0 - beta1 ** t)
    bc2 = np.float32(1.0 - beta2 ** t)
    b1 = np.float32(beta1)
    b2 = np.float32(beta2)
    lr32 = np.float32(lr)
    eps32 = np.float32(eps)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != param shape {p.shape} for '{name}'")
        g = g.astype(p.dtype, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (np.float32(1.0) - b1) * g
        v *= b2
        v += (np.float32(1.0) - b2) * (g * g)
        p -= lr32 * (m / bc1) / (np.sqrt(v / bc2) + eps32)
    return params, state
