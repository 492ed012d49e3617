"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Each op builds a ``Tensor`` node holding its value, its parent nodes and a
vjp closure.  ``backward(loss)`` walks the recorded graph in reverse
topological order and accumulates gradients; gradients of parameters land in
their persistent ``Param.grad`` buffers (additively, so repeated backward
calls accumulate).  Inside ``no_grad()`` no graph is recorded.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import _kernels as K

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (rollouts, targets, eval)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Param:
    """A named trainable array with a same-shape gradient accumulator."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data):
        self.name = name
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.data.shape})"


class ParamSet:
    """Ordered collection of named Params.

    Every parameter owns exactly one gradient slot of identical shape.
    Iteration order is insertion order and is relied on for optimizer state,
    Polyak updates and checkpointing.  ``compact()`` moves all data and
    gradients into two flat arenas (params become views) so that whole-set
    operations run as single vector ops.
    """

    def __init__(self, params: dict[str, np.ndarray] | None = None):
        self._params: dict[str, Param] = {}
        self.flat_data: np.ndarray | None = None
        self.flat_grad: np.ndarray | None = None
        if params:
            for name, data in params.items():
                self.add(name, data)

    def add(self, name: str, data) -> Param:
        if self.flat_data is not None:
            raise ValueError("cannot add parameters to a compacted ParamSet")
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param(name, data)
        self._params[name] = p
        return p

    def compact(self) -> "ParamSet":
        """Re-home all parameters into contiguous data/grad arenas."""
        if self.flat_data is None:
            total = self.n_scalars()
            self.flat_data = np.empty(total)
            self.flat_grad = np.zeros(total)
            off = 0
            for p in self:
                n = p.data.size
                view = self.flat_data[off:off + n].reshape(p.data.shape)
                view[...] = p.data
                p.data = view
                p.grad = self.flat_grad[off:off + n].reshape(p.data.shape)
                off += n
        return self

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def zero_grads(self):
        if self.flat_grad is not None:
            self.flat_grad[...] = 0.0
        else:
            for p in self:
                p.zero_grad()

    def clone(self) -> "ParamSet":
        out = ParamSet()
        for p in self:
            out.add(p.name, p.data.copy())
        if self.flat_data is not None:
            out.compact()
        return out

    def copy_from(self, other: "ParamSet"):
        for p, q in zip(self, other, strict=True):
            p.data[...] = q.data

    def n_scalars(self) -> int:
        return sum(p.data.size for p in self)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for p in self:
            p.data[...] = state[p.name]


class Tensor:
    """A node of the recorded computation."""

    __slots__ = ("data", "parents", "vjp", "grad", "param")

    def __init__(self, data, parents=(), vjp=None, param=None):
        self.data = data
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        self.param = param

    @property
    def shape(self):
        return self.data.shape


def _node(data, parents, vjp):
    if _GRAD_ENABLED:
        return Tensor(data, parents, vjp)
    return Tensor(data)


def constant(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def use(param: Param) -> Tensor:
    """Wrap a Param as a leaf of the current graph."""
    if _GRAD_ENABLED:
        return Tensor(param.data, param=param)
    return Tensor(param.data)


def use_frozen(param: Param) -> Tensor:
    """Wrap a Param as a constant: its gradient slot stays untouched."""
    return Tensor(param.data)


def backward(loss: Tensor, seed: float = 1.0):
    """Accumulate d(loss)/d(param) into every reachable Param.grad.

    ``loss`` must be a scalar node produced by a recorded forward pass.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward() expects a Tensor")
    if np.ndim(loss.data) != 0 and np.size(loss.data) != 1:
        raise ValueError(f"loss must be scalar, got shape {np.shape(loss.data)}")
    if not loss.parents and loss.param is None:
        raise RuntimeError(
            "backward() called without a recorded forward pass "
            "(the loss tensor has no computation graph)"
        )

    # iterative topological order over the DAG
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.asarray(seed, dtype=np.float64).reshape(np.shape(loss.data))
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        if node.param is not None:
            node.param.grad += g
        if node.vjp is not None:
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                if parent.grad is None:
                    # copy: vjps may hand back the incoming grad itself
                    parent.grad = np.array(pg)
                else:
                    parent.grad += pg


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / arithmetic ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                         _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                         _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                         _unbroadcast(g * a.data, b.data.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _node(out, (a,), lambda g: (np.where(a.data > 0.0, g, 0.0),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data
    return _node(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def matmul3(x: Tensor, w: Tensor) -> Tensor:
    """y = x @ w for x of shape (..., Din) and 2-D w, no bias."""
    xd = x.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = (x2 @ w.data).reshape(*lead, w.data.shape[1])

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        return (g2 @ w.data.T).reshape(xd.shape), x2.T @ g2

    return _node(out, (x, w), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b with x of shape (..., Din); w (Din, Dout); b (Dout,)."""
    xd = x.data
    if xd.shape[-1] != w.data.shape[0]:
        raise ValueError(
            f"linear: input dim {xd.shape[-1]} does not match weight "
            f"dim {w.data.shape[0]}"
        )
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = (x2 @ w.data + b.data).reshape(*lead, w.data.shape[1])

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        return (g2 @ w.data.T).reshape(xd.shape), x2.T @ g2, g2.sum(axis=0)

    return _node(out, (x, w, b), vjp)


# ---------------------------------------------------------------------------
# reductions


def sum_last(a: Tensor) -> Tensor:
    out = a.data.sum(axis=-1)
    return _node(out, (a,), lambda g: (np.broadcast_to(g[..., None], a.data.shape).copy(),))


def masked_mean(a: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of a over positions where mask is nonzero; scalar output."""
    m = np.asarray(mask, dtype=np.float64)
    n = m.sum()
    if n == 0:
        raise ValueError("masked_mean: mask selects no positions")
    out = np.asarray((a.data * m).sum() / n)
    return _node(out, (a,), lambda g: (g * m / n,))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.sum() / n)
    return _node(out, (a,), lambda g: (np.broadcast_to(g / n, a.data.shape).copy(),))


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    na = a.data.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return _node(out, (a, b), lambda g: (np.ascontiguousarray(g[..., :na]),
                                         np.ascontiguousarray(g[..., na:])))


def interleave3(a: Tensor, b: Tensor, c: Tensor) -> Tensor:
    """Interleave three (B, T, D) streams into (B, 3T, D) as a0 b0 c0 a1 ..."""
    bsz, t, d = a.data.shape
    out = np.stack([a.data, b.data, c.data], axis=2).reshape(bsz, 3 * t, d)

    def vjp(g):
        g4 = g.reshape(bsz, t, 3, d)
        return (np.ascontiguousarray(g4[:, :, 0, :]),
                np.ascontiguousarray(g4[:, :, 1, :]),
                np.ascontiguousarray(g4[:, :, 2, :]))

    return _node(out, (a, b, c), vjp)


def strided_tokens(a: Tensor, start: int, step: int) -> Tensor:
    """Select a[:, start::step, :] from a (B, T, D) stream."""
    out = np.ascontiguousarray(a.data[:, start::step, :])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, start::step, :] = g
        return (full,)

    return _node(out, (a,), vjp)


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Embedding lookup: table (N, D) indexed by integer idx (...,)."""
    out = table.data[idx]

    def vjp(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return (dt,)

    return _node(out, (table,), vjp)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    return _node(a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# fused kernels


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis of x (..., D)."""
    xd = x.data
    lead = xd.shape[:-1]
    x2 = np.ascontiguousarray(xd.reshape(-1, xd.shape[-1]))
    y2, xhat, inv_std = K.layernorm_fwd(x2, gain.data, bias.data, eps)

    def vjp(g):
        g2 = np.ascontiguousarray(g.reshape(-1, g.shape[-1]))
        dx, dg, db = K.layernorm_bwd(g2, xhat, inv_std, gain.data)
        return dx.reshape(xd.shape), dg, db

    return _node(y2.reshape(xd.shape), (x, gain, bias), vjp)


def attention(q: Tensor, k: Tensor, v: Tensor, allowed: np.ndarray) -> Tensor:
    """Masked multi-head attention over (B, H, T, Dh) tensors."""
    qd = np.ascontiguousarray(q.data)
    kd = np.ascontiguousarray(k.data)
    vd = np.ascontiguousarray(v.data)
    y, w = K.attn_fwd(qd, kd, vd, allowed)

    def vjp(g):
        return K.attn_bwd(np.ascontiguousarray(g), qd, kd, vd, w)

    return _node(y, (q, k, v), vjp)
