"""Dense float64 tensors with tape-based reverse-mode differentiation.

Kernels are numpy: matmul goes through BLAS, reductions use numpy's
fixed-order pairwise summation, so results are deterministic on a fixed
platform and thread count. Everything on the training path is float64;
half precision exists only as an accounting convention in the cost model.

The tape is dynamic: every op records its parents and a closure mapping the
output gradient to each parent gradient. ``backward`` on a scalar walks the
tape in reverse topological order and accumulates into leaf ``.grad``
buffers (repeated calls without ``zero_grad`` sum).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True
_CHECKED = False

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (evaluation mode)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def checked(enabled: bool = True):
    """Toggle NaN/Inf assertions at op boundaries (off by default)."""
    global _CHECKED
    prev, _CHECKED = _CHECKED, enabled
    try:
        yield
    finally:
        _CHECKED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _check_finite(arr: np.ndarray, opname: str) -> None:
    if _CHECKED and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values out of {opname}")


def _as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the unbroadcast operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """N-d float64 array, row-major, with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        _check_finite(self.data, "tensor")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        # (parent, fn) pairs; fn maps the output grad to the parent grad
        self._parents: tuple = ()

    # -- construction ------------------------------------------------------

    @staticmethod
    def _from_op(
        data: np.ndarray,
        parents: Iterable[tuple["Tensor", Callable[[np.ndarray], np.ndarray]]],
        opname: str,
    ) -> "Tensor":
        _check_finite(data, opname)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        live = tuple((p, fn) for p, fn in parents if p.requires_grad)
        if _GRAD_ENABLED and live:
            out.requires_grad = True
            out._parents = live
        else:
            out.requires_grad = False
            out._parents = ()
        return out

    # -- basics ------------------------------------------------------------

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
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- autodiff ----------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode accumulation from a scalar into leaf ``.grad``."""
        if self.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node._parents:
                for parent, fn in node._parents:
                    pg = fn(g)
                    key = id(parent)
                    if key in flowing:
                        flowing[key] = flowing[key] + pg
                    else:
                        flowing[key] = pg
            elif node.requires_grad:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, [(self, lambda g: -g)], "neg")

    def __sub__(self, other) -> "Tensor":
        return add(self, -other if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other) -> "Tensor":
        return add(-self, other)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        return div(self, other)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        data = np.ascontiguousarray(self.data.reshape(shape))
        return Tensor._from_op(data, [(self, lambda g: g.reshape(old))], "reshape")

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        data = np.ascontiguousarray(self.data.transpose(axes))
        return Tensor._from_op(data, [(self, lambda g: g.transpose(inv))], "transpose")

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def back(g):
            if axis is None:
                return np.broadcast_to(g, shape).copy()
            if not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return Tensor._from_op(np.asarray(data), [(self, back)], "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


class Parameter(Tensor):
    """A named trainable leaf; names are unique within a model registry."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"


# -- binary ops --------------------------------------------------------------


def _coerce(other) -> np.ndarray:
    return other.data if isinstance(other, Tensor) else np.asarray(other, dtype=np.float64)


def add(a: Tensor, other) -> Tensor:
    b = _coerce(other)
    out = a.data + b
    parents = [(a, lambda g: _unbroadcast(g, a.shape))]
    if isinstance(other, Tensor):
        parents.append((other, lambda g: _unbroadcast(g, other.shape)))
    return Tensor._from_op(out, parents, "add")


def mul(a: Tensor, other) -> Tensor:
    b = _coerce(other)
    out = a.data * b
    parents = [(a, lambda g: _unbroadcast(g * b, a.shape))]
    if isinstance(other, Tensor):
        adata = a.data
        parents.append((other, lambda g: _unbroadcast(g * adata, other.shape)))
    return Tensor._from_op(out, parents, "mul")


def div(a: Tensor, other) -> Tensor:
    b = _coerce(other)
    out = a.data / b
    parents = [(a, lambda g: _unbroadcast(g / b, a.shape))]
    if isinstance(other, Tensor):
        adata = a.data
        parents.append((other, lambda g: _unbroadcast(-g * adata / (b * b), other.shape)))
    return Tensor._from_op(out, parents, "div")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = a.data @ b.data
    bdata, adata = b.data, a.data

    def ga(g):
        return _unbroadcast(g @ np.swapaxes(bdata, -1, -2), a.shape)

    def gb(g):
        return _unbroadcast(np.swapaxes(adata, -1, -2) @ g, b.shape)

    return Tensor._from_op(out, [(a, ga), (b, gb)], "matmul")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def make_back(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        sl = tuple(sl)
        return lambda g: g[sl]

    parents = [(t, make_back(i)) for i, t in enumerate(tensors)]
    return Tensor._from_op(out, parents, "concat")


# -- structural ops ----------------------------------------------------------


def pad(x: Tensor, pad_width: Sequence[tuple[int, int]]) -> Tensor:
    pad_width = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    out = np.pad(x.data, pad_width)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, x.shape))
    return Tensor._from_op(out, [(x, lambda g: g[sl])], "pad")


def crop(x: Tensor, slices: Sequence[slice]) -> Tensor:
    slices = tuple(slices)
    out = np.ascontiguousarray(x.data[slices])
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        full[slices] = g
        return full

    return Tensor._from_op(out, [(x, back)], "crop")


def roll(x: Tensor, shift: Sequence[int], axes: Sequence[int]) -> Tensor:
    shift = tuple(int(s) for s in shift)
    axes = tuple(axes)
    out = np.roll(x.data, shift, axis=axes)
    inv = tuple(-s for s in shift)
    return Tensor._from_op(out, [(x, lambda g: np.roll(g, inv, axis=axes))], "roll")


# -- elementwise -------------------------------------------------------------


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._from_op(out, [(x, lambda g: g * out)], "exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(x.data)
    xdata = x.data
    return Tensor._from_op(out, [(x, lambda g: g / xdata)], "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return Tensor._from_op(out, [(x, lambda g: g * (0.5 / out))], "sqrt")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    phi = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = xd * phi

    def back(g):
        dens = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return g * (phi + xd * dens)

    return Tensor._from_op(out, [(x, back)], "gelu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``; output rows sum to 1."""
    ax = axis if axis >= 0 else x.ndim + axis
    if ax >= x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    if x.shape[ax] == 0:
        raise ShapeError("softmax over an empty axis")
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def back(g):
        return out * (g - (g * out).sum(axis=ax, keepdims=True))

    return Tensor._from_op(out, [(x, back)], "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing channel axis to zero mean / unit variance, then affine."""
    c = x.shape[-1]
    if c == 0:
        raise ShapeError("layer_norm over a zero-extent channel axis")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    lead = tuple(range(x.ndim - 1))

    def gx(g):
        gg = g * gamma.data
        return inv * (gg - gg.mean(axis=-1, keepdims=True)
                      - xhat * (gg * xhat).mean(axis=-1, keepdims=True))

    return Tensor._from_op(
        out,
        [
            (x, gx),
            (gamma, lambda g: (g * xhat).sum(axis=lead)),
            (beta, lambda g: g.sum(axis=lead)),
        ],
        "layer_norm",
    )


def mlp_block(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
              activation: Callable[[Tensor], Tensor] = gelu) -> Tensor:
    """Two dense layers with GELU between; shape-preserving on the channel axis."""
    c = x.shape[-1]
    if w1.shape[0] != c or w2.shape[1] != c or w1.shape[1] != w2.shape[0]:
        raise ShapeError(
            f"mlp_block weights {w1.shape}/{w2.shape} do not map channel width {c} to itself"
        )
    h = activation(matmul(x, w1) + b1)
    return matmul(h, w2) + b2


def l2_normalize(x: Tensor, axis: int = -1, tiny: float = 1e-30) -> Tensor:
    """Scale rows to unit L2 norm; all-zero rows pass through (caller warns)."""
    sq = (x * x).sum(axis=axis, keepdims=True)
    norm = sqrt(sq + tiny)
    return div(x, norm)


def stack_batch(arrays: Sequence[np.ndarray]) -> Tensor:
    """Stack raw numpy volumes into one constant input tensor."""
    return Tensor(np.stack([np.asarray(a, dtype=np.float64) for a in arrays], axis=0))
