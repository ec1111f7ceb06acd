"""Dense float64 tensors with tape-based reverse-mode gradients.

Only the handful of operations the forecasting model needs are provided.
Every op records a closure that pushes its output gradient back onto its
inputs; :func:`backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out axes that were broadcast in the forward pass
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph.

    ``data`` is a float64 ndarray. Leaves created by
    :meth:`ParamStore.variables` carry a binding back to their store so
    that :func:`backward` can deposit gradients there.
    """

    __slots__ = ("data", "grad", "_parents", "_backward", "_binding")

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward_fn=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._backward = backward_fn
        self._binding: tuple["ParamStore", str] | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        # never mutate g in place: callers may hand the same array to several parents
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    # arithmetic

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def _bw(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def _bw(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))

        out._backward = _bw
        return out

    __rmul__ = __mul__

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # shape manipulation

    def reshape(self, *shape) -> "Tensor":
        out = Tensor(self.data.reshape(*shape), (self,))
        out._backward = lambda g: self._accumulate(g.reshape(self.shape))
        return out

    def transpose(self, *axes) -> "Tensor":
        inverse = np.argsort(axes)
        out = Tensor(self.data.transpose(*axes), (self,))
        out._backward = lambda g: self._accumulate(g.transpose(*inverse))
        return out

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def _bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))

        out._backward = _bw
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data), (a, b))

    def _bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        a._accumulate(_unbroadcast(ga, a.shape))
        b._accumulate(_unbroadcast(gb, b.shape))

    out._backward = _bw
    return out


def dense(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis: ``x @ W + b`` with W shaped (in, out)."""
    x = as_tensor(x)
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    y = matmul(flat, weight)
    if bias is not None:
        y = y + bias
    return y.reshape(*lead, y.shape[-1])


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0), (x,))
    out._backward = lambda g: x._accumulate(g * mask)
    return out


def sin(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.sin(x.data), (x,))
    out._backward = lambda g: x._accumulate(g * np.cos(x.data))
    return out


def square(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data * x.data, (x,))
    out._backward = lambda g: x._accumulate(2.0 * g * x.data)
    return out


def softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    p = softmax_array(x.data, axis)
    out = Tensor(p, (x,))

    def _bw(g):
        x._accumulate(p * (g - np.sum(g * p, axis=axis, keepdims=True)))

    out._backward = _bw
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then ``gain * y + bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, (x, gain, bias))

    def _bw(g):
        d = x.shape[-1]
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * np.mean(gx_hat * xhat, axis=-1, keepdims=True))
        x._accumulate(gx)
        gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        bias._accumulate(g.reshape(-1, d).sum(axis=0))

    out._backward = _bw
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _bw(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            t._accumulate(piece)

    out._backward = _bw
    return out


def _topological(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, accumulate: bool = False) -> None:
    """Back-propagate a scalar ``loss`` and write gradients into bound stores.

    Gradient slots of every store touched by the graph are overwritten
    (zeroed first) unless ``accumulate`` is set.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    stores = {id(n._binding[0]): n._binding[0] for n in order if n._binding is not None}
    if not accumulate:
        for store in stores.values():
            store.zero_grad()
    for node in order:
        if node._binding is not None and node.grad is not None:
            store, name = node._binding
            store.grads[name] += node.grad


@dataclass(frozen=True)
class Entry:
    name: str
    tag: str
    shape: tuple
    offset: int
    size: int


class ParamStore:
    """Ordered named parameters with paired gradient slots and layer tags."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.tags: dict[str, str] = {}

    def add(self, name: str, value, tag: str | None = None) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=DTYPE, copy=True)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.tags[name] = name if tag is None else tag

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def layer_tags(self) -> list[str]:
        return list(dict.fromkeys(self.tags.values()))

    @property
    def size(self) -> int:
        return sum(p.size for p in self.params.values())

    def entries(self) -> list[Entry]:
        out, offset = [], 0
        for name, p in self.params.items():
            out.append(Entry(name, self.tags[name], tuple(p.shape), offset, p.size))
            offset += p.size
        return out

    def variables(self) -> dict[str, Tensor]:
        """Fresh graph leaves that share memory with the stored parameters."""
        leaves = {}
        for name, p in self.params.items():
            t = Tensor(p)
            t._binding = (self, name)
            leaves[name] = t
        return leaves

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def flatten(self) -> np.ndarray:
        if not self.params:
            return np.zeros(0, dtype=DTYPE)
        return np.concatenate([p.reshape(-1) for p in self.params.values()])

    def flat_grad(self) -> np.ndarray:
        if not self.grads:
            return np.zeros(0, dtype=DTYPE)
        return np.concatenate([g.reshape(-1) for g in self.grads.values()])

    def unflatten(self, vector: np.ndarray) -> "ParamStore":
        """A new store with this store's layout and values taken from ``vector``."""
        vector = np.asarray(vector, dtype=DTYPE)
        if vector.shape != (self.size,):
            raise ValueError(f"expected a vector of length {self.size}, got {vector.shape}")
        out = ParamStore()
        for e in self.entries():
            out.add(e.name, vector[e.offset:e.offset + e.size].reshape(e.shape), e.tag)
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, p in self.params.items():
            out.add(name, p, self.tags[name])
            out.grads[name][...] = self.grads[name]
        return out

    def assign(self, other: "ParamStore") -> None:
        """Copy values from a store with identical layout, in place."""
        self.check_compatible(other)
        for name in self.params:
            self.params[name][...] = other.params[name]

    def check_compatible(self, other: "ParamStore") -> None:
        mine = [(e.name, e.tag, e.shape) for e in self.entries()]
        theirs = [(e.name, e.tag, e.shape) for e in other.entries()]
        if mine != theirs:
            raise ValueError("parameter stores have different layouts")

    def layer_slices(self) -> dict[str, list[slice]]:
        """Slices of the flat vector grouped by layer tag."""
        out: dict[str, list[slice]] = {}
        for e in self.entries():
            out.setdefault(e.tag, []).append(slice(e.offset, e.offset + e.size))
        return out


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst_name: str
    worst_index: tuple
    analytic: float
    numeric: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _value(x) -> float:
    return float(x.data.reshape(-1)[0]) if isinstance(x, Tensor) else float(x)


def gradient_check(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    n_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` with central differences.

    All coordinates are checked unless ``n_coords`` is given, in which case a
    seeded random subset of that size is used.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    loss = f(params)
    base = _value(loss)
    if _value(f(params)) != base:
        raise ValueError("objective is not deterministic")
    backward(loss)

    coords = [(e.name, idx) for e in params.entries() for idx in np.ndindex(*e.shape)]
    if n_coords is not None and n_coords < len(coords):
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(len(coords), size=n_coords, replace=False))
        coords = [coords[i] for i in picks]

    worst = (-1.0, "", (), 0.0, 0.0)
    for name, idx in coords:
        p = params[name]
        original = p[idx]
        p[idx] = original + step
        up = _value(f(params))
        p[idx] = original - step
        down = _value(f(params))
        p[idx] = original
        numeric = (up - down) / (2 * step)
        analytic = float(params.grads[name][idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        if rel > worst[0]:
            worst = (rel, name, idx, analytic, numeric)
    return GradCheckReport(worst[0], len(coords), worst[1], worst[2], worst[3], worst[4], tolerance)
