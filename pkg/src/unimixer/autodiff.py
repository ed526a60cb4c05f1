"""Minimal reverse-mode autodiff on numpy arrays.

A ``Var`` wraps an ndarray and remembers how it was produced; calling
:func:`backward` on a scalar loss walks the tape in reverse topological
order and accumulates gradients into ``.grad``. Only the operations the
training graph needs are implemented, each with a hand-written vjp that
the finite-difference harness verifies end to end.

Non-Var operands are treated as constants.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = ["Var", "backward"]


class Var:
    __slots__ = ("value", "grad", "parents", "vjp", "name")

    def __init__(self, value, parents: Sequence["Var"] = (),
                 vjp: Optional[Callable] = None, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Var(shape={self.value.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _parents(*xs) -> tuple:
    return tuple(x for x in xs if isinstance(x, Var))


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Undo numpy broadcasting: reduce g down to ``shape``."""
    if g.shape == shape:
        return g
    # sum away prepended axes
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    # sum axes that were broadcast from 1
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(a, b, value, da, db) -> Var:
    av, bv = _val(a), _val(b)
    parents = _parents(a, b)

    def vjp(g):
        out = []
        if isinstance(a, Var):
            out.append(_sum_to_shape(da(g, av, bv), av.shape))
        if isinstance(b, Var):
            out.append(_sum_to_shape(db(g, av, bv), bv.shape))
        return out

    return Var(value(av, bv), parents, vjp)


def add(a, b) -> Var:
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Var:
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Var:
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Var:
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def matmul(a, b) -> Var:
    """np.matmul with broadcasting; gradients are summed back to operand shapes."""
    av, bv = _val(a), _val(b)
    parents = _parents(a, b)

    def vjp(g):
        out = []
        if isinstance(a, Var):
            if av.ndim == 1 and bv.ndim == 1:
                ga = g * bv
            elif bv.ndim == 1:
                ga = np.outer(g, bv) if av.ndim == 2 else g[..., None] * bv
            else:
                ga = np.matmul(g, np.swapaxes(bv, -1, -2))
            out.append(_sum_to_shape(ga, av.shape))
        if isinstance(b, Var):
            if av.ndim == 1 and bv.ndim == 1:
                gb = g * av
            elif av.ndim == 1:
                gb = np.outer(av, g)
            elif bv.ndim == 1:
                gb = np.einsum("...i,...->i", av, g) if av.ndim > 2 else av.T @ g
            else:
                gb = np.matmul(np.swapaxes(av, -1, -2), g)
            out.append(_sum_to_shape(gb, bv.shape))
        return out

    return Var(np.matmul(av, bv), parents, vjp)


def exp(a) -> Var:
    av = _val(a)
    ev = np.exp(av)
    return Var(ev, _parents(a), lambda g: [g * ev])


def log(a) -> Var:
    av = _val(a)
    return Var(np.log(av), _parents(a), lambda g: [g / av])


def sigmoid(a) -> Var:
    av = _val(a)
    sv = np.where(av >= 0, 1.0 / (1.0 + np.exp(-np.abs(av))),
                  np.exp(-np.abs(av)) / (1.0 + np.exp(-np.abs(av))))
    return Var(sv, _parents(a), lambda g: [g * sv * (1.0 - sv)])


def swish(a) -> Var:
    av = _val(a)
    sv = np.where(av >= 0, 1.0 / (1.0 + np.exp(-np.abs(av))),
                  np.exp(-np.abs(av)) / (1.0 + np.exp(-np.abs(av))))
    return Var(av * sv, _parents(a),
               lambda g: [g * (sv + av * sv * (1.0 - sv))])


def vsum(a, axis=None, keepdims: bool = False) -> Var:
    av = _val(a)

    def vjp(g):
        if axis is None:
            return [np.broadcast_to(g, av.shape).copy()]
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        return [np.broadcast_to(gg, av.shape).copy()]

    return Var(av.sum(axis=axis, keepdims=keepdims), _parents(a), vjp)


def vmean(a, axis=None, keepdims: bool = False) -> Var:
    av = _val(a)
    if axis is None:
        count = av.size
    else:
        count = av.shape[axis]
    return vsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Var:
    av = _val(a)
    return Var(av.reshape(shape), _parents(a),
               lambda g: [g.reshape(av.shape)])


def transpose(a, axes) -> Var:
    av = _val(a)
    inv = np.argsort(axes)
    return Var(av.transpose(axes), _parents(a),
               lambda g: [g.transpose(inv)])


def concat(parts: Sequence, axis: int = -1) -> Var:
    vals = [_val(p) for p in parts]
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        out = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(p, Var):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                out.append(g[tuple(idx)])
        return out

    return Var(np.concatenate(vals, axis=axis),
               tuple(p for p in parts if isinstance(p, Var)), vjp)


def per_token_linear(x, w) -> Var:
    """einsum('nka,kac->nkc'): row k of every sample through weight set k."""
    xv, wv = _val(x), _val(w)
    parents = _parents(x, w)

    def vjp(g):
        out = []
        if isinstance(x, Var):
            out.append(np.einsum("nkc,kac->nka", g, wv))
        if isinstance(w, Var):
            out.append(np.einsum("nka,nkc->kac", xv, g))
        return out

    return Var(np.einsum("nka,kac->nkc", xv, wv), parents, vjp)


def basis_combine(omega, z) -> Var:
    """einsum('ib,bxy->ixy'): per-row linear combination of basis matrices."""
    ov, zv = _val(omega), _val(z)
    parents = _parents(omega, z)

    def vjp(g):
        out = []
        if isinstance(omega, Var):
            out.append(np.einsum("ixy,bxy->ib", g, zv))
        if isinstance(z, Var):
            out.append(np.einsum("ib,ixy->bxy", ov, g))
        return out

    return Var(np.einsum("ib,bxy->ixy", ov, zv), parents, vjp)


def rms_norm_rows(x, eps: float = 1e-6) -> Var:
    """x / sqrt(mean(x^2, last axis) + eps), batched over leading axes."""
    xv = _val(x)
    n = xv.shape[-1]
    s = np.sqrt(np.mean(xv * xv, axis=-1, keepdims=True) + eps)
    yv = xv / s

    def vjp(g):
        dot = np.sum(g * xv, axis=-1, keepdims=True)
        return [g / s - xv * dot / (n * s**3)]

    return Var(yv, _parents(x), vjp)


def softmax_last(x) -> Var:
    """Stable softmax over the last axis."""
    xv = _val(x)
    e = np.exp(xv - xv.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = np.sum(g * p, axis=-1, keepdims=True)
        return [(g - inner) * p]

    return Var(p, _parents(x), vjp)


def embedding_gather(table, idx: np.ndarray) -> Var:
    """Row lookup; the gradient scatter-adds into the table."""
    tv = _val(table)
    idx = np.asarray(idx)

    def vjp(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, idx, g)
        return [gt]

    return Var(tv[idx], _parents(table), vjp)


def bce_with_logits(z, y) -> Var:
    """Mean binary cross-entropy on logits, stabilized; y is constant."""
    zv = _val(z)
    yv = _val(y)
    loss = np.mean(np.maximum(zv, 0.0) - zv * yv + np.log1p(np.exp(-np.abs(zv))))
    sig = np.where(zv >= 0, 1.0 / (1.0 + np.exp(-np.abs(zv))),
                   np.exp(-np.abs(zv)) / (1.0 + np.exp(-np.abs(zv))))

    def vjp(g):
        return [g * (sig - yv) / zv.size]

    return Var(loss, _parents(z), vjp)


def _topo_order(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Var) -> None:
    """Accumulate d(loss)/d(node) into .grad for every node on the tape."""
    loss.grad = np.ones_like(loss.value)
    for node in reversed(_topo_order(loss)):
        if node.vjp is None or node.grad is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad = parent.grad + g
