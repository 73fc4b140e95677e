"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every gradient is assembled from the same primitives it differentiates, so a
gradient with respect to an input is itself a graph node and can be
differentiated again (needed for losses that contain an input-gradient).
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_SEQ = itertools.count()


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """Graph node holding a float64 array (row-major buffer + shape).

    Leaves carry data only; interior nodes additionally record the primitive
    that produced them (name, parent nodes, pure kernel), which makes the
    recording replayable and gives the reverse sweep a well-defined order.
    """

    __slots__ = ("data", "op", "parents", "requires_grad", "seq", "_kernel", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        if not np.all(np.isfinite(self.data)):
            raise ContractError("tensor data must be finite")
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self.requires_grad = bool(requires_grad)
        self.seq = next(_SEQ)
        self._kernel = None
        self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.op = "leaf"
        out.parents = ()
        out.requires_grad = False
        out.seq = next(_SEQ)
        out._kernel = None
        out._vjp = None
        return out

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape})"

    # arithmetic sugar; scalars become constant leaves
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make_node(op: str, kernel: Callable, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = kernel(*(p.data for p in parents))
    out.op = op
    out.parents = parents
    out.requires_grad = any(p.requires_grad for p in parents)
    out.seq = next(_SEQ)
    out._kernel = kernel
    out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(u):
        return (_unbroadcast(u, a.shape), _unbroadcast(u, b.shape))

    return _make_node("add", np.add, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(u):
        return (_unbroadcast(u, a.shape), _unbroadcast(neg(u), b.shape))

    return _make_node("sub", np.subtract, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(u):
        return (_unbroadcast(mul(u, b), a.shape), _unbroadcast(mul(u, a), b.shape))

    return _make_node("mul", np.multiply, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    def vjp(u):
        ga = div(u, b)
        gb = neg(div(mul(u, a), mul(b, b)))
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make_node("div", np.divide, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(u):
        return (neg(u),)

    return _make_node("neg", np.negative, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def vjp(u):
        return (matmul(u, transpose(b)), matmul(transpose(a), u))

    return _make_node("matmul", np.matmul, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects 2-D, got {a.shape}")

    def vjp(u):
        return (transpose(u),)

    return _make_node("transpose", lambda x: x.T, (a,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)

    def vjp(u):
        return (reshape(u, a.shape),)

    return _make_node("reshape", lambda x: np.reshape(x, shape), (a,), vjp)


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)

    def vjp(u):
        return (_unbroadcast(u, a.shape),)

    return _make_node(
        "broadcast", lambda x: np.ascontiguousarray(np.broadcast_to(x, shape)), (a,), vjp
    )


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    kd_shape = tuple(
        1 if (axes is None or i in axes) else d for i, d in enumerate(a.shape)
    )

    def kernel(x):
        return np.sum(x, axis=axes, keepdims=keepdims)

    def vjp(u):
        return (broadcast_to(reshape(u, kd_shape), a.shape),)

    return _make_node("sum", kernel, (a,), vjp)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    if axes is None:
        n = a.size
    else:
        n = 1
        for i in axes:
            n *= a.shape[i]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / n))


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)

    def vjp(u):
        return (mul(u, mul(Tensor(p), power(a, p - 1.0))),)

    return _make_node("pow", lambda x: x**p, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    def vjp(u):
        return (mul(u, out),)

    out = _make_node("exp", np.exp, (a,), vjp)
    return out


def log(a: Tensor) -> Tensor:
    def vjp(u):
        return (div(u, a),)

    return _make_node("log", np.log, (a,), vjp)


def _sigmoid_kernel(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(a: Tensor) -> Tensor:
    def vjp(u):
        return (mul(u, mul(out, sub(Tensor(1.0), out))),)

    out = _make_node("sigmoid", _sigmoid_kernel, (a,), vjp)
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), computed without overflow."""

    def vjp(u):
        return (mul(u, sigmoid(a)),)

    return _make_node("softplus", lambda x: np.logaddexp(0.0, x), (a,), vjp)


def _silu_kernel(x):
    with np.errstate(over="ignore"):
        return x / (1.0 + np.exp(-x))


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""

    def vjp(u):
        s = sigmoid(a)
        return (mul(u, mul(s, add(Tensor(1.0), mul(a, sub(Tensor(1.0), s))))),)

    return _make_node("silu", _silu_kernel, (a,), vjp)


def _norm_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(i % ndim for i in axis)


def _unbroadcast(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce t back to `shape` by summing broadcast axes (differentiable)."""
    if t.shape == shape:
        return t
    extra = t.ndim - len(shape)
    if extra > 0:
        t = reduce_sum(t, axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and t.shape[i] != 1)
    if axes:
        t = reduce_sum(t, axis=axes, keepdims=True)
    if t.shape != shape:
        t = reshape(t, shape)
    return t


# ---------------------------------------------------------------------------
# differentiation


def grad(output: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of the (summed) output with respect to each tensor in wrt.

    With create_graph=True the returned tensors stay connected to the graph
    and can be differentiated again; otherwise they are detached leaves.
    """
    wrt = list(wrt)
    for w in wrt:
        if not w.requires_grad:
            raise ContractError("grad target does not require gradients")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[Tensor] = [output]
    while stack:
        node = stack.pop()
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        order.append(node)
        stack.extend(node.parents)
    order.sort(key=lambda n: n.seq)

    adjoint: dict[int, Tensor] = {id(output): Tensor(np.ones(output.shape))}
    for node in reversed(order):
        u = adjoint.get(id(node))
        if u is None or not node.parents:
            continue
        for parent, pg in zip(node.parents, node._vjp(u)):
            if pg is None or not parent.requires_grad:
                continue
            cur = adjoint.get(id(parent))
            adjoint[id(parent)] = pg if cur is None else add(cur, pg)

    results = []
    for w in wrt:
        g = adjoint.get(id(w))
        if g is None:
            g = Tensor(np.zeros(w.shape))
        results.append(g if create_graph else g.detach())
    return results


class ComputationTape:
    """Ordered record of every primitive reachable from a set of outputs.

    Recording order is a topological order (parents are always recorded
    before children), so iterating the nodes reversed is a valid strict
    reverse topological sweep.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_outputs(cls, *outputs: Tensor) -> "ComputationTape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = list(outputs)
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node.parents)
        nodes.sort(key=lambda n: n.seq)
        return cls(nodes)

    def replay(self) -> bool:
        """Re-execute every recorded primitive; True iff all outputs are
        bit-identical to the recorded ones."""
        for node in self.nodes:
            if node._kernel is None:
                continue
            fresh = node._kernel(*(p.data for p in node.parents))
            a = np.ascontiguousarray(node.data)
            b = np.ascontiguousarray(fresh)
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return True

    def reverse_order(self) -> list[Tensor]:
        return list(reversed(self.nodes))
