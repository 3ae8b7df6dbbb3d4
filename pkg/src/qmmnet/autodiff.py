"""Small reverse-mode automatic differentiation over numpy float64 arrays.

Every primitive registers a forward function and a vector-Jacobian adjoint
in OP_REGISTRY; check_adjoints() is the build-time exhaustiveness check.
Gradient accumulation follows graph construction order, so runs are
bit-reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import UnregisteredAdjoint

OP_REGISTRY = {}


def register_op(name):
    def deco(vjp_builder):
        OP_REGISTRY[name] = vjp_builder
        return vjp_builder

    return deco


def check_adjoints():
    """Raise if any registered operation lacks a backward rule."""
    for name, vjp in OP_REGISTRY.items():
        if vjp is None:
            raise UnregisteredAdjoint(f"operation {name!r} has no adjoint")
    return sorted(OP_REGISTRY)


class Tensor:
    """Node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "op", "_vjps")

    def __init__(self, data, requires_grad=False, parents=(), op="leaf", vjps=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.parents = parents
        self.op = op
        self._vjps = vjps

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, grad={self.requires_grad})"

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def item(self):
        return float(self.data)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, op="param")


def _unbroadcast(grad, shape):
    """Sum grad over axes that were broadcast to reach `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _node(op, data, parents, vjps):
    return Tensor(data, parents=tuple(parents), op=op, vjps=tuple(vjps))


@register_op("add")
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        "add",
        a.data + b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.data.shape),
            lambda g: _unbroadcast(g, b.data.shape),
        ),
    )


@register_op("sub")
def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        "sub",
        a.data - b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.data.shape),
            lambda g: _unbroadcast(-g, b.data.shape),
        ),
    )


@register_op("mul")
def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        "mul",
        a.data * b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.data.shape),
            lambda g: _unbroadcast(g * a.data, b.data.shape),
        ),
    )


@register_op("div")
def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        "div",
        a.data / b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.data, a.data.shape),
            lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


@register_op("matmul")
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        "matmul",
        a.data @ b.data,
        (a, b),
        (
            lambda g: _matmul_vjp_a(g, a.data, b.data),
            lambda g: _matmul_vjp_b(g, a.data, b.data),
        ),
    )


def _matmul_vjp_a(g, a, b):
    if b.ndim == 1:
        return np.outer(g, b) if a.ndim == 2 else g * b
    if a.ndim == 1:
        return g @ b.T if g.ndim == 1 else np.einsum("j,ij->i", g, b)
    return g @ np.swapaxes(b, -1, -2)


def _matmul_vjp_b(g, a, b):
    if a.ndim == 1:
        return np.outer(a, g) if b.ndim == 2 else g * a
    if b.ndim == 1:
        return a.T @ g
    return np.swapaxes(a, -1, -2) @ g


@register_op("einsum")
def einsum(spec, *tensors):
    tensors = tuple(as_tensor(t) for t in tensors)
    in_spec, out_spec = spec.split("->")
    in_subs = in_spec.split(",")
    data = np.einsum(spec, *(t.data for t in tensors))

    def make_vjp(i):
        def vjp(g):
            others = [out_spec] + [s for j, s in enumerate(in_subs) if j != i]
            operands = [g] + [t.data for j, t in enumerate(tensors) if j != i]
            back_spec = ",".join(others) + "->" + in_subs[i]
            return np.einsum(back_spec, *operands)

        return vjp

    return _node("einsum", data, tensors, tuple(make_vjp(i) for i in range(len(tensors))))


@register_op("sum")
def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        g2 = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g2, a.data.shape).copy()

    return _node("sum", data, (a,), (vjp,))


@register_op("reshape")
def reshape(a, shape):
    a = as_tensor(a)
    return _node(
        "reshape",
        a.data.reshape(shape),
        (a,),
        (lambda g: g.reshape(a.data.shape),),
    )


@register_op("transpose")
def transpose(a, axes=None):
    a = as_tensor(a)
    axes_ = axes if axes is not None else tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes_)
    return _node(
        "transpose",
        a.data.transpose(axes_),
        (a,),
        (lambda g: g.transpose(inv),),
    )


@register_op("getitem")
def getitem(a, key):
    a = as_tensor(a)

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return out

    return _node("getitem", a.data[key], (a,), (vjp,))


@register_op("concatenate")
def concatenate(tensors, axis=0):
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]

        return vjp

    return _node(
        "concatenate",
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        tuple(make_vjp(i) for i in range(len(tensors))),
    )


@register_op("stack")
def stack(tensors, axis=0):
    tensors = tuple(as_tensor(t) for t in tensors)

    def make_vjp(i):
        return lambda g: np.take(g, i, axis=axis)

    return _node(
        "stack",
        np.stack([t.data for t in tensors], axis=axis),
        tensors,
        tuple(make_vjp(i) for i in range(len(tensors))),
    )


@register_op("sqrt")
def sqrt(a):
    a = as_tensor(a)
    data = np.sqrt(a.data)
    return _node("sqrt", data, (a,), (lambda g: g * 0.5 / data,))


@register_op("exp")
def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)
    return _node("exp", data, (a,), (lambda g: g * data,))


@register_op("log")
def log(a):
    a = as_tensor(a)
    return _node("log", np.log(a.data), (a,), (lambda g: g / a.data,))


@register_op("sigmoid")
def sigmoid(a):
    a = as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))
    return _node("sigmoid", data, (a,), (lambda g: g * data * (1.0 - data),))


@register_op("softplus")
def softplus(a):
    a = as_tensor(a)
    # overflow-safe log(1 + e^x)
    data = np.logaddexp(0.0, a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return _node("softplus", data, (a,), (lambda g: g * sig,))


@register_op("abs")
def absolute(a):
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _node("abs", np.abs(a.data), (a,), (lambda g: g * sign,))


def swish(a):
    """x * sigmoid(x), the Swish activation with beta = 1."""
    return mul(a, sigmoid(a))


def square(a):
    return mul(a, a)


def backward(loss):
    """Accumulate gradients of a scalar loss into every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    topo = []
    visited = set()
    stack_ = [(loss, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in visited:
                stack_.append((p, False))
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op == "param" or not node.parents:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        if len(node._vjps) != len(node.parents):
            raise UnregisteredAdjoint(f"operation {node.op!r} has no adjoint")
        for p, vjp in zip(node.parents, node._vjps):
            if not p.requires_grad:
                continue
            if vjp is None:
                raise UnregisteredAdjoint(
                    f"operation {node.op!r} has no adjoint"
                )
            contrib = vjp(g)
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    return loss
