"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a vector-Jacobian closure on the
output node, so one forward pass builds one tape.  ``backward`` walks the
tape once per call and *adds* into ``.grad``, so repeated calls without
``zero_grad`` accumulate.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = ["Tensor", "no_grad", "stack"]

_grad_enabled = True


class no_grad:
    """Context manager that suspends graph recording (evaluation paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g, s) in enumerate(zip(grad.shape, shape)):
        if g != s:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], vjp: Callable) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    @staticmethod
    def as_tensor(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    # -- introspection ---------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        out_data = self.data + other.data

        def vjp(g):
            return (_unbroadcast(g, self.data.shape),
                    _unbroadcast(g, other.data.shape))

        return Tensor._make(out_data, (self, other), vjp)

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        out_data = self.data * other.data
        a, b = self.data, other.data

        def vjp(g):
            return (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))

        return Tensor._make(out_data, (self, other), vjp)

    __rmul__ = __mul__

    def __sub__(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        out_data = self.data - other.data

        def vjp(g):
            return (_unbroadcast(g, self.data.shape),
                    _unbroadcast(-g, other.data.shape))

        return Tensor._make(out_data, (self, other), vjp)

    def __rsub__(self, other) -> "Tensor":
        return Tensor.as_tensor(other) - self

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __truediv__(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        a, b = self.data, other.data
        out_data = a / b

        def vjp(g):
            return (_unbroadcast(g / b, a.shape),
                    _unbroadcast(-g * a / (b * b), b.shape))

        return Tensor._make(out_data, (self, other), vjp)

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor.as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        out_data = a ** exponent

        def vjp(g):
            return (g * exponent * a ** (exponent - 1),)

        return Tensor._make(out_data, (self,), vjp)

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def vjp(g):
            return (g * out_data,)

        return Tensor._make(out_data, (self,), vjp)

    def log(self) -> "Tensor":
        a = self.data

        def vjp(g):
            return (g / a,)

        return Tensor._make(np.log(a), (self,), vjp)

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)

        def vjp(g):
            return (g * 0.5 / out_data,)

        return Tensor._make(out_data, (self,), vjp)

    # -- reductions and shape ops ------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            if not keepdims:
                axes = (axis,) if isinstance(axis, int) else tuple(axis)
                g = np.expand_dims(g, tuple(a % len(shape) for a in axes))
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(np.asarray(out_data), (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        out_data = self.data.reshape(shape)

        def vjp(g):
            return (g.reshape(old),)

        return Tensor._make(out_data, (self,), vjp)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        out_data = self.data.transpose(axes)

        def vjp(g):
            return (g.transpose(inverse),)

        return Tensor._make(out_data, (self,), vjp)

    # -- backward pass -------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``.grad`` of every recorded node.

        ``self`` must be a scalar (one element).  Gradients for this call are
        computed in a scratch table and then added to ``.grad``, so calling
        ``backward`` twice doubles the stored gradients.
        """
        if self.size != 1:
            raise ValueError(
                f"backward requires a scalar root, got shape {self.data.shape}")

        # Iterative post-order DFS; parents of an op are its inputs.
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        table: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = table.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in table:
                    table[key] = table[key] + pg
                else:
                    table[key] = pg


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack scalars or same-shape tensors along a new leading axis."""
    parts = [Tensor.as_tensor(p) for p in parts]
    out_data = np.stack([p.data for p in parts])

    def vjp(g):
        return tuple(g[i] for i in range(len(parts)))

    return Tensor._make(out_data, parts, vjp)
