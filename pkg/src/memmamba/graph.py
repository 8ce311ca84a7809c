"""Tape-based reverse-mode differentiation over numpy arrays.

Operations are recorded on the active :class:`Tape` in creation order, which is
already a topological order, so :meth:`Tape.backward` just walks it backwards.
Outside a tape every operation runs eagerly and records nothing.

    with Tape() as tape:
        w = tape.param(w0)
        loss = ...
        grads = tape.backward(loss)
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

_ACTIVE: list["Tape"] = []


class Var:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn")

    def __init__(self, value, requires_grad=False):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []
        self.params: list[Var] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def param(self, value) -> Var:
        v = Var(np.asarray(value, dtype=np.float64), requires_grad=True)
        self.params.append(v)
        return v

    def backward(self, out: Var, seed=None):
        """Accumulate d(out)/d(node) into ``.grad`` of every recorded node."""
        out.grad = np.ones_like(out.value) if seed is None else seed
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg
            # intermediate gradients are not needed after propagation
            node.grad = None
        return [p.grad for p in self.params]


def lift(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=np.float64))


def _record(value, parents, backward_fn) -> Var:
    if not _ACTIVE or not any(p.requires_grad for p in parents):
        return Var(value)
    out = Var(value, requires_grad=True)
    out.parents = parents
    out.backward_fn = backward_fn
    _ACTIVE[-1].nodes.append(out)
    return out


def unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Var:
    a, b = lift(a), lift(b)
    sa, sb = a.value.shape, b.value.shape
    return _record(a.value + b.value, (a, b),
                   lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def neg(a) -> Var:
    a = lift(a)
    return _record(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Var:
    a, b = lift(a), lift(b)
    av, bv = a.value, b.value
    return _record(av * bv, (a, b),
                   lambda g: (unbroadcast(g * bv, av.shape) if a.requires_grad else None,
                              unbroadcast(g * av, bv.shape) if b.requires_grad else None))


def matmul_t(x, W) -> Var:
    """x @ W.T for x of shape (..., k) and W of shape (m, k)."""
    x, W = lift(x), lift(W)
    xv, Wv = x.value, W.value

    def back(g):
        gx = g @ Wv if x.requires_grad else None
        gW = None
        if W.requires_grad:
            gW = g.reshape(-1, g.shape[-1]).T @ xv.reshape(-1, xv.shape[-1])
        return gx, gW

    return _record(xv @ Wv.T, (x, W), back)


def rowdot(x, w, b) -> Var:
    """x @ w + b for x (B, d), w (d,), b (1,); returns (B,)."""
    x, w, b = lift(x), lift(w), lift(b)
    xv, wv = x.value, w.value

    def back(g):
        return (np.outer(g, wv) if x.requires_grad else None,
                g @ xv if w.requires_grad else None,
                np.array([g.sum()]))

    return _record(xv @ wv + b.value[0], (x, w, b), back)


def sigmoid(a) -> Var:
    a = lift(a)
    s = expit(a.value)
    return _record(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a) -> Var:
    a = lift(a)
    v = a.value
    s = expit(v)
    return _record(v * s, (a,), lambda g: (g * (s + v * s * (1.0 - s)),))


def tanh(a) -> Var:
    a = lift(a)
    t = np.tanh(a.value)
    return _record(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a) -> Var:
    a = lift(a)
    e = np.exp(a.value)
    return _record(e, (a,), lambda g: (g * e,))


def softplus(a) -> Var:
    a = lift(a)
    v = a.value
    return _record(np.logaddexp(0.0, v), (a,), lambda g: (g * expit(v),))


def reshape(a, shape) -> Var:
    a = lift(a)
    old = a.value.shape
    return _record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def gather_rows(E, idx) -> Var:
    E = lift(E)
    idx = np.asarray(idx)
    shape = E.value.shape

    def back(g):
        gE = np.zeros(shape)
        np.add.at(gE, idx, g)
        return (gE,)

    return _record(E.value[idx], (E,), back)


def stack(items, axis=0) -> Var:
    items = [lift(v) for v in items]
    out = np.stack([v.value for v in items], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(items)))

    return _record(out, tuple(items), back)


def concat(items, axis=0) -> Var:
    items = [lift(v) for v in items]
    sizes = np.cumsum([v.value.shape[axis] for v in items])[:-1]
    out = np.concatenate([v.value for v in items], axis=axis)
    return _record(out, tuple(items), lambda g: tuple(np.split(g, sizes, axis=axis)))


def maximum(items) -> Var:
    """Element-wise max of same-shaped Vars; the gradient goes to the first argmax."""
    items = [lift(v) for v in items]
    if len(items) == 1:
        return items[0]
    vals = np.stack([v.value for v in items])
    arg = np.argmax(vals, axis=0)
    return _record(vals.max(axis=0), tuple(items),
                   lambda g: tuple(np.where(arg == i, g, 0.0) for i in range(len(items))))


def mean(items) -> Var:
    items = [lift(v) for v in items]
    if len(items) == 1:
        return items[0]
    k = len(items)
    out = np.stack([v.value for v in items]).mean(axis=0)
    return _record(out, tuple(items), lambda g: tuple(g / k for _ in range(k)))


def insert_rows(pool, s, onehot) -> Var:
    """Overwrite slot ``onehot[b]`` of ``pool[b]`` (B, C, k) with ``s[b]`` (B, k)."""
    pool, s = lift(pool), lift(s)
    oh = onehot[:, :, None]
    keep = 1.0 - oh
    out = pool.value * keep + oh * s.value[:, None, :]
    return _record(out, (pool, s), lambda g: (g * keep, (g * oh).sum(axis=1)))


def attend(q, K, V, mask, scale) -> Var:
    """Masked single-query attention per batch row.

    q (B, a), K (B, M, a), V (B, M, d), mask (B, M) boolean.  Rows whose mask
    is all False return zeros.
    """
    q, K, V = lift(q), lift(K), lift(V)
    qv, Kv, Vv = q.value, K.value, V.value
    logits = np.einsum("bma,ba->bm", Kv, qv) * scale
    logits = np.where(mask, logits, -np.inf)
    any_valid = mask.any(axis=1)
    top = np.where(any_valid, logits.max(axis=1, initial=-np.inf, where=mask), 0.0)
    e = np.where(mask, np.exp(logits - top[:, None]), 0.0)
    denom = e.sum(axis=1)
    w = e / np.where(any_valid, denom, 1.0)[:, None]
    out = np.einsum("bm,bmd->bd", w, Vv)

    def back(g):
        gw = np.einsum("bmd,bd->bm", Vv, g)
        glog = w * (gw - (w * gw).sum(axis=1, keepdims=True)) * scale
        gq = np.einsum("bm,bma->ba", glog, Kv) if q.requires_grad else None
        gK = glog[:, :, None] * qv[:, None, :] if K.requires_grad else None
        gV = w[:, :, None] * g[:, None, :] if V.requires_grad else None
        return gq, gK, gV

    return _record(out, (q, K, V), back)


def cross_entropy(logits, targets, weights) -> Var:
    """Weighted mean of -log softmax(logits)[target] over the leading axes."""
    logits = lift(logits)
    lv = logits.value
    top = lv.max(axis=-1, keepdims=True)
    shifted = lv - top
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    total = weights.sum()
    loss = -(picked * weights).sum() / total

    def back(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return ((p - onehot) * (weights / total)[..., None] * g,)

    return _record(np.asarray(loss), (logits,), back)
