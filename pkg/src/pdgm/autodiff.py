"""A small reverse-mode autodiff over numpy arrays.

Each :class:`Tensor` remembers its parents and a vector-Jacobian product.
Graphs are built dynamically, and a node may feed any number of consumers
(shared subgraphs are accumulated once per consumer during the sweep).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Vjp = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "name")
    __array_priority__ = 1000
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), vjp: Vjp | None = None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp
        self.name = name

    # -- basics --------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators -------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


ArrayLike = Tensor | np.ndarray | float


def lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value(x) -> np.ndarray:
    """The numeric value behind a Tensor, array or scalar."""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def make_op(data, parents: Iterable, vjp: Vjp) -> Tensor:
    """Create a node. ``vjp(g)`` must return one gradient (or None) per parent.

    Parents that are not Tensors, or do not require gradients, are ignored
    in the backward sweep.
    """
    parents = tuple(parents)
    if any(isinstance(p, Tensor) and p.requires_grad for p in parents):
        return Tensor(data, True, parents, vjp)
    return Tensor(data)


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (undoing numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    ndiff = g.ndim - len(shape)
    if ndiff:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementary ops ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def neg(a) -> Tensor:
    a = lift(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    ad, bd = a.data, b.data
    return make_op(
        ad * bd, (a, b), lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape))
    )


def div(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_op(
        out,
        (a, b),
        lambda g: (unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)),
    )


def power(a, exponent: float) -> Tensor:
    a = lift(a)
    ad = a.data
    if exponent == 2:
        return make_op(ad * ad, (a,), lambda g: (2.0 * g * ad,))
    return make_op(ad**exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def matmul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    return make_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def _unary(fn, dfn_from_out_in):
    def op(a) -> Tensor:
        a = lift(a)
        x = a.data
        out = fn(x)
        return make_op(out, (a,), lambda g: (g * dfn_from_out_in(out, x),))

    return op


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


tanh = _unary(np.tanh, lambda y, x: 1.0 - y * y)
sigmoid = _unary(_sigmoid, lambda y, x: y * (1.0 - y))
exp = _unary(np.exp, lambda y, x: y)
log = _unary(np.log, lambda y, x: 1.0 / x)
sqrt = _unary(np.sqrt, lambda y, x: 0.5 / y)
sin = _unary(np.sin, lambda y, x: np.cos(x))
cos = _unary(np.cos, lambda y, x: -np.sin(x))
absolute = _unary(np.abs, lambda y, x: np.sign(x))
identity = _unary(lambda x: x.copy(), lambda y, x: 1.0)


def transpose(a) -> Tensor:
    a = lift(a)
    return make_op(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = lift(a)
    old = a.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = lift(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = lift(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(a, idx) -> Tensor:
    a = lift(a)
    shape = a.shape
    basic = _is_basic_index(idx)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return make_op(a.data[idx], (a,), vjp)


def concatenate(items: Sequence, axis: int = 0) -> Tensor:
    items = [lift(x) for x in items]
    sizes = [x.shape[axis] for x in items]
    splits = np.cumsum(sizes)[:-1]
    return make_op(
        np.concatenate([x.data for x in items], axis=axis),
        items,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(items: Sequence, axis: int = 0) -> Tensor:
    items = [lift(x) for x in items]
    n = len(items)
    return make_op(
        np.stack([x.data for x in items], axis=axis),
        items,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant mask."""
    cond = np.asarray(value(cond), dtype=bool)
    a, b = lift(a), lift(b)
    sa, sb = a.shape, b.shape
    return make_op(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (unbroadcast(np.where(cond, g, 0.0), sa), unbroadcast(np.where(cond, 0.0, g), sb)),
    )


# -- backward sweep -----------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if isinstance(p, Tensor) and p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def grad(root: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Reverse-mode derivatives of the scalar ``root`` with respect to ``wrt``.

    Tensors in ``wrt`` that the root does not depend on get zero gradients.
    """
    if not isinstance(root, Tensor):
        raise TypeError("root must be a Tensor")
    if root.data.size != 1:
        raise ValueError(f"gradient root must be a scalar, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {}
    if root.requires_grad:
        grads[id(root)] = np.ones_like(root.data)
        for node in reversed(_topological(root)):
            g = grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if node._parents:
                del grads[id(node)]  # interior node fully propagated
    return [np.array(grads.get(id(w), np.zeros_like(w.data)), dtype=np.float64) for w in wrt]
