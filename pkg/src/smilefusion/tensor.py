"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a fresh Tensor holding the forward value, the
parent nodes, and one vector-Jacobian-product closure per parent.
``backward()`` on a scalar walks the graph once in reverse topological
order and accumulates gradients into ``.grad`` (so a second backward call
without resetting doubles them).

Broadcasting follows the usual trailing-alignment rule but only permits
exact matches or size-1 expansion; anything else raises ShapeMismatchError.
Every forward result is checked for NaN/inf and rejected with
NonFiniteValueError, which keeps silent numeric blowups out of training.
"""

from __future__ import annotations

import json

import numpy as np

from . import kernels
from .errors import (
    NonFiniteValueError,
    NotScalarLossError,
    ShapeMismatchError,
)


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError(f"{op} produced non-finite values")


def _broadcastable(sa, sb) -> bool:
    for da, db in zip(reversed(sa), reversed(sb)):
        if da != db and da != 1 and db != 1:
            return False
    return True


def _require_broadcastable(sa, sb, op: str) -> None:
    if not _broadcastable(sa, sb):
        raise ShapeMismatchError(f"{op}: shapes {sa} and {sb} do not broadcast")


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back down to `shape` by summation."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _lift(value) -> "Tensor":
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    """A float64 array plus its place in the autodiff graph."""

    __slots__ = ("data", "grad", "_parents", "_vjps")

    def __init__(self, data, _parents=(), _vjps=()):
        self.data = _as_array(data)
        self.grad = None
        self._parents = _parents
        self._vjps = _vjps

    # -- structural helpers ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def detach(self) -> "Tensor":
        """A new leaf holding the same values, cut off from this graph."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        a, b = self.data, other.data
        _require_broadcastable(a.shape, b.shape, "add")
        out = a + b
        _check_finite(out, "add")
        return Tensor(
            out,
            (self, other),
            (
                lambda g: _unbroadcast(g, a.shape),
                lambda g: _unbroadcast(g, b.shape),
            ),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other)
        a, b = self.data, other.data
        _require_broadcastable(a.shape, b.shape, "sub")
        out = a - b
        _check_finite(out, "sub")
        return Tensor(
            out,
            (self, other),
            (
                lambda g: _unbroadcast(g, a.shape),
                lambda g: _unbroadcast(-g, b.shape),
            ),
        )

    def __rsub__(self, other):
        return _lift(other).__sub__(self)

    def __mul__(self, other):
        other = _lift(other)
        a, b = self.data, other.data
        _require_broadcastable(a.shape, b.shape, "mul")
        out = a * b
        _check_finite(out, "mul")
        return Tensor(
            out,
            (self, other),
            (
                lambda g: _unbroadcast(g * b, a.shape),
                lambda g: _unbroadcast(g * a, b.shape),
            ),
        )

    __rmul__ = __mul__

    def __neg__(self):
        a = self.data
        return Tensor(-a, (self,), (lambda g: -g,))

    def scale(self, c: float) -> "Tensor":
        """Multiply by a python scalar (no graph node for the constant)."""
        c = float(c)
        out = self.data * c
        _check_finite(out, "scale")
        return Tensor(out, (self,), (lambda g: g * c,))

    def matmul(self, other: "Tensor") -> "Tensor":
        other = _lift(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeMismatchError(
                f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}"
            )
        if a.shape[-1] != b.shape[-2] or not _broadcastable(a.shape[:-2], b.shape[:-2]):
            raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape} do not align")
        out = a @ b
        _check_finite(out, "matmul")

        def da(g):
            return _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)

        def db(g):
            return _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)

        return Tensor(out, (self, other), (da, db))

    def __matmul__(self, other):
        return self.matmul(other)

    # -- shape ops ----------------------------------------------------------

    def transpose(self, *axes) -> "Tensor":
        a = self.data
        if not axes:
            axes = tuple(range(a.ndim))[::-1]
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if sorted(axes) != list(range(a.ndim)):
            raise ShapeMismatchError(f"transpose: axes {axes} invalid for shape {a.shape}")
        inverse = tuple(np.argsort(axes))
        return Tensor(a.transpose(axes), (self,), (lambda g: g.transpose(inverse),))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self.data
        try:
            out = a.reshape(shape)
        except ValueError as exc:
            raise ShapeMismatchError(f"reshape: {a.shape} -> {shape}: {exc}") from exc
        original = a.shape
        return Tensor(out, (self,), (lambda g: g.reshape(original),))

    def __getitem__(self, index) -> "Tensor":
        a = self.data
        out = a[index]
        full_shape = a.shape

        def vjp(g):
            buf = np.zeros(full_shape, dtype=np.float64)
            np.add.at(buf, index, g)
            return buf

        return Tensor(out, (self,), (vjp,))

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self.data
        out = a.sum(axis=axis, keepdims=keepdims)
        shape = a.shape

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, shape).copy()
            g2 = g if keepdims else np.expand_dims(g, axis)
            return np.broadcast_to(g2, shape).copy()

        return Tensor(out, (self,), (vjp,))

    def mean_over_axis(self, axis: int, keepdims: bool = False) -> "Tensor":
        n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims).scale(1.0 / n)

    def mean(self) -> "Tensor":
        return self.sum().scale(1.0 / self.data.size)

    def max_over_axis(self, axis: int, keepdims: bool = False) -> "Tensor":
        a = self.data
        out = a.max(axis=axis, keepdims=keepdims)
        idx = np.expand_dims(a.argmax(axis=axis), axis)

        def vjp(g):
            g2 = g if keepdims else np.expand_dims(g, axis)
            buf = np.zeros_like(a)
            np.put_along_axis(buf, idx, g2, axis)
            return buf

        return Tensor(out, (self,), (vjp,))

    # -- elementwise nonlinearities -------------------------------------------

    def relu(self) -> "Tensor":
        a = self.data
        out = np.maximum(a, 0.0)
        mask = a > 0.0
        return Tensor(out, (self,), (lambda g: g * mask,))

    def sigmoid(self) -> "Tensor":
        a = self.data
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        _check_finite(out, "sigmoid")
        return Tensor(out, (self,), (lambda g: g * out * (1.0 - out),))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor(out, (self,), (lambda g: g * (1.0 - out * out),))

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        _check_finite(out, "exp")
        return Tensor(out, (self,), (lambda g: g * out,))

    def log(self) -> "Tensor":
        a = self.data
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(a)
        _check_finite(out, "log")
        return Tensor(out, (self,), (lambda g: g / a,))

    def clip(self, lo: float, hi: float) -> "Tensor":
        a = self.data
        out = np.clip(a, lo, hi)
        mask = (a >= lo) & (a <= hi)
        return Tensor(out, (self,), (lambda g: g * mask,))

    # -- normalizers -----------------------------------------------------------

    def softmax_over_axis(self, axis: int) -> "Tensor":
        a = self.data
        ax = axis % a.ndim
        moved_shape = np.moveaxis(a, ax, -1).shape
        flat = np.ascontiguousarray(np.moveaxis(a, ax, -1)).reshape(-1, a.shape[ax])
        y2 = kernels.softmax_fwd(flat)
        _check_finite(y2, "softmax")
        out = np.moveaxis(y2.reshape(moved_shape), -1, ax)

        def vjp(g):
            g2 = np.ascontiguousarray(np.moveaxis(g, ax, -1)).reshape(y2.shape)
            gx = kernels.softmax_bwd(y2, g2)
            return np.moveaxis(gx.reshape(moved_shape), -1, ax)

        return Tensor(out, (self,), (vjp,))

    def layer_norm(self, axis: int = -1, eps: float = 1e-5) -> "Tensor":
        a = self.data
        ax = axis % a.ndim
        moved_shape = np.moveaxis(a, ax, -1).shape
        flat = np.ascontiguousarray(np.moveaxis(a, ax, -1)).reshape(-1, a.shape[ax])
        xhat, rstd = kernels.layer_norm_fwd(flat, float(eps))
        _check_finite(xhat, "layer_norm")
        out = np.moveaxis(xhat.reshape(moved_shape), -1, ax)

        def vjp(g):
            g2 = np.ascontiguousarray(np.moveaxis(g, ax, -1)).reshape(xhat.shape)
            gx = kernels.layer_norm_bwd(xhat, rstd, g2)
            return np.moveaxis(gx.reshape(moved_shape), -1, ax)

        return Tensor(out, (self,), (vjp,))

    def dropout(self, rate: float, train: bool, rng: np.random.Generator | None) -> "Tensor":
        """Inverted dropout: kept units are scaled by 1/(1-rate) so the
        expectation matches eval mode. Identity when train is False or
        rate == 0 (same node, bit-for-bit)."""
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        if not train or rate == 0.0:
            return self
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = rng.random(self.data.shape) >= rate
        inv = 1.0 / (1.0 - rate)
        out = self.data * keep * inv
        return Tensor(out, (self,), (lambda g: g * keep * inv,))

    # -- graph traversal ---------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into every reachable node's .grad.

        self must hold exactly one element. Each node is visited once, in
        reverse topological order; per-call gradients are kept separate and
        only added into .grad at visit time, so repeated calls without
        zeroing accumulate (twice the calls, twice the gradient).
        """
        if self.data.size != 1:
            raise NotScalarLossError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
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
                if id(parent) not in seen:
                    stack.append((parent, False))

        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            for parent, vjp in zip(node._parents, node._vjps):
                contribution = vjp(g)
                slot = flowing.get(id(parent))
                flowing[id(parent)] = (
                    contribution if slot is None else slot + contribution
                )

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() on shape {self.data.shape}")
        return float(self.data.reshape(()))


class Parameter(Tensor):
    """A named trainable leaf tensor."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data)
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate tensors along an existing axis."""
    tensors = [_lift(t) for t in tensors]
    arrays = [t.data for t in tensors]
    base = list(arrays[0].shape)
    ax = axis % arrays[0].ndim
    for arr in arrays[1:]:
        other = list(arr.shape)
        if len(other) != len(base) or any(
            i != ax and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeMismatchError(
                f"concat: shapes {[a.shape for a in arrays]} on axis {axis}"
            )
    out = np.concatenate(arrays, axis=ax)

    vjps = []
    offset = 0
    for arr in arrays:
        start, width = offset, arr.shape[ax]
        index = tuple(
            slice(start, start + width) if i == ax else slice(None)
            for i in range(arr.ndim)
        )
        vjps.append(lambda g, index=index: g[index])
        offset += width
    return Tensor(out, tuple(tensors), tuple(vjps))


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# -- checkpoint io -------------------------------------------------------------


def save_params(params, path, extra: dict | None = None) -> None:
    """Write parameters as JSON. Values are serialized through python floats
    (shortest round-trip repr), so reloading is bit-for-bit lossless."""
    payload = {
        "format_version": 1,
        "params": [
            {
                "name": p.name,
                "shape": list(p.data.shape),
                "data": p.data.ravel().tolist(),
                "trainable": p.trainable,
            }
            for p in params
        ],
    }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_params(path) -> tuple[list[Parameter], dict]:
    """Read a checkpoint written by save_params. Returns the parameter list
    and any extra top-level fields."""
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != 1:
        raise ValueError(f"unsupported checkpoint format_version: {version!r}")
    params = []
    for entry in payload["params"]:
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        params.append(Parameter(entry["name"], arr, trainable=entry.get("trainable", True)))
    extra = {k: v for k, v in payload.items() if k not in ("format_version", "params")}
    return params, extra


# -- gradient verification ------------------------------------------------------


def grad_check(f, params, step: float = 1e-5) -> float:
    """Compare reverse-mode gradients of f() against central differences.

    f is a zero-argument callable returning a scalar Tensor; it must be
    deterministic and must rebuild its graph from `params` on every call.
    Returns the maximum relative error over every coordinate of every
    parameter, guarding the denominator away from zero:
    |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    zero_grads(params)
    loss = f()
    loss.backward()
    analytic = [
        np.zeros_like(p.data) if p.grad is None else np.array(p.grad, copy=True)
        for p in params
    ]

    worst = 0.0
    for p, g_ad in zip(params, analytic):
        for ix in np.ndindex(p.data.shape):
            saved = p.data[ix]
            p.data[ix] = saved + step
            up = f().item()
            p.data[ix] = saved - step
            down = f().item()
            p.data[ix] = saved
            g_fd = (up - down) / (2.0 * step)
            err = abs(g_ad[ix] - g_fd) / max(1e-8, abs(g_ad[ix]) + abs(g_fd))
            if err > worst:
                worst = err
    return worst
