"""Small numpy-backed tensor with tape-based reverse-mode differentiation.

Only the kernels the model needs are provided. Every kernel checks that its
output is finite and raises :class:`NonFiniteError` otherwise.
"""
from __future__ import annotations

import contextlib
import hashlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_grad_enabled = True


class NonFiniteError(FloatingPointError):
    """Raised when a kernel produces NaN or Inf."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {op}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    # make numpy defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            floating = isinstance(data, np.ndarray) and data.dtype.kind == "f"
            dtype = data.dtype if floating else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # ---- construction helpers -------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
        out = Tensor.__new__(Tensor)
        out.data = _check_finite(data, op)
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ---- backward -------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # ---- elementwise arithmetic -----------------------------------------------
    def __add__(self, other) -> Tensor:
        other = _as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(self.data + other.data, (self, other),
                            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)), "add")

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        other = _as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(self.data - other.data, (self, other),
                            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)), "sub")

    def __rsub__(self, other) -> Tensor:
        return _as_tensor(other, self.dtype) - self

    def __mul__(self, other) -> Tensor:
        other = _as_tensor(other, self.dtype)
        a, b = self.data, other.data
        return Tensor._make(a * b, (self, other),
                            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        other = _as_tensor(other, self.dtype)
        a, b = self.data, other.data
        return Tensor._make(a / b, (self, other),
                            lambda g: (_unbroadcast(g / b, a.shape),
                                       _unbroadcast(-g * a / (b * b), b.shape)), "div")

    def __neg__(self) -> Tensor:
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float) -> Tensor:
        a = self.data
        return Tensor._make(a ** exponent, (self,),
                            lambda g: (g * exponent * a ** (exponent - 1),), "pow")

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, idx) -> Tensor:
        shape, dtype = self.shape, self.dtype
        fancy = _is_fancy(idx)

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            if fancy:
                np.add.at(full, idx, g)
            else:
                full[idx] = g
            return (full,)

        return Tensor._make(self.data[idx], (self,), backward, "getitem")

    # ---- shape ops ------------------------------------------------------------
    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,),
                            lambda g: (g.transpose(inverse),), "transpose")

    def swapaxes(self, a: int, b: int) -> Tensor:
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    # ---- reductions -----------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,),
                            backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def _is_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype or DEFAULT_DTYPE), requires_grad=requires_grad)


# ---- kernels ------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a @ b`` with numpy broadcasting over leading dims."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    x, y = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(y, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return Tensor._make(x @ y, (a, b), backward, "matmul")


def softmax_lastdim(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` is a boolean array broadcastable to ``x``; False entries get
    probability exactly zero. Every row must keep at least one entry.
    """
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, z.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("attention mask removes every key for some query")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor._make(p, (x,), backward, "softmax")


def layernorm_noaffine(x: Tensor, eps: float = 1e-6) -> Tensor:
    """LayerNorm over the last axis without scale or bias."""
    if x.shape[-1] < 2:
        raise ValueError("layernorm needs a last dimension of at least 2")
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return Tensor._make(xhat, (x,), backward, "layernorm")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    a = x.data
    inner = _GELU_C * (a + 0.044715 * a ** 3)
    th = np.tanh(inner)
    out = 0.5 * a * (1.0 + th)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        return (g * (0.5 * (1.0 + th) + 0.5 * a * (1.0 - th * th) * dinner),)

    return Tensor._make(out, (x,), backward, "gelu")


def silu(x: Tensor) -> Tensor:
    a = x.data
    s = 1.0 / (1.0 + np.exp(-a))

    def backward(g):
        return (g * s * (1.0 + a * (1.0 - s)),)

    return Tensor._make(a * s, (x,), backward, "silu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,), "exp")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                        backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        ax = axis if axis >= 0 else len(shape) + 1 + axis
        shape.insert(ax, 1)
        expanded.append(t.reshape(tuple(shape)))
    return concat(expanded, axis=axis)


def split(x: Tensor, sizes: Iterable[int], axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into consecutive pieces of the given sizes."""
    sizes = list(sizes)
    if sum(sizes) != x.shape[axis]:
        raise ValueError(f"split sizes {sizes} do not cover axis of length {x.shape[axis]}")
    out, start = [], 0
    ax = axis if axis >= 0 else x.ndim + axis
    for n in sizes:
        idx = [slice(None)] * x.ndim
        idx[ax] = slice(start, start + n)
        out.append(x[tuple(idx)])
        start += n
    return out


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant boolean array."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = np.where(cond, a.data, b.data)

    def backward(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return Tensor._make(out, (a, b), backward, "where")


def pad_axis(x: Tensor, before: int, after: int, axis: int) -> Tensor:
    """Zero-pad one axis."""
    ax = axis if axis >= 0 else x.ndim + axis
    widths = [(0, 0)] * x.ndim
    widths[ax] = (before, after)
    n = x.shape[ax]

    def backward(g):
        idx = [slice(None)] * g.ndim
        idx[ax] = slice(before, before + n)
        return (g[tuple(idx)],)

    return Tensor._make(np.pad(x.data, widths), (x,), backward, "pad")


# ---- random streams -----------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream.

    A (seed, name, counter) triple maps to a fixed Philox key, so draws do not
    depend on how many other streams were consumed first.
    """

    seed: int
    name: str = "default"
    counter: int = 0

    def key(self, *index: int) -> int:
        payload = f"{self.seed}|{self.name}|{self.counter}|{','.join(map(str, index))}"
        return int.from_bytes(hashlib.blake2b(payload.encode(), digest_size=16).digest(), "little")

    def generator(self, *index: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key(*index)))

    def child(self, name: str) -> RngStream:
        return RngStream(self.seed, f"{self.name}/{name}", self.counter)

    def advance(self, n: int = 1) -> RngStream:
        return RngStream(self.seed, self.name, self.counter + n)
