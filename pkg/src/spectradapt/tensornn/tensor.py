"""Dense float64 tensors with recorded operations and reverse-mode gradients.

Every primitive checks its output for NaN/Inf and raises NonFiniteError
naming the offending op, so training aborts at the first bad value instead
of propagating garbage. Gradients accumulate by summation over fan-out.
"""
from __future__ import annotations

import numpy as np
from scipy import special as _special


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by op '{op}'")
        self.op = op


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """N-d float64 array plus the graph edge that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fns", "op")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 _parents=(), _grad_fns=()):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, op)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._grad_fns = _grad_fns
        self.op = op

    # -- basic introspection -------------------------------------------------
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
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, op="detach")

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph construction --------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, op: str, parents: tuple["Tensor", ...],
              grad_fns: tuple) -> "Tensor":
        req = any(p.requires_grad for p in parents)
        if not req:
            return Tensor(data, requires_grad=False, op=op)
        return Tensor(data, requires_grad=True, op=op,
                      _parents=parents, _grad_fns=grad_fns)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros(self.data.shape, dtype=np.float64)
        self.grad += grad

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this node; each node visited exactly once."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without explicit gradient "
                                 "requires a scalar root")
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            for parent, fn in zip(node._parents, node._grad_fns):
                if parent.requires_grad:
                    parent._accumulate(fn(g))

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __rtruediv__(self, other):
        return mul(power(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    # method spellings used throughout the model code
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int)
                       else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=False, op="const")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return Tensor._make(out, "add", (a, b),
                        (lambda g: _unbroadcast(g, a.data.shape),
                         lambda g: _unbroadcast(g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return Tensor._make(out, "mul", (a, b),
                        (lambda g: _unbroadcast(g * b.data, a.data.shape),
                         lambda g: _unbroadcast(g * a.data, b.data.shape)))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    e = float(exponent)
    out = a.data ** e
    return Tensor._make(out, "pow", (a,),
                        (lambda g: g * e * a.data ** (e - 1.0),))


def matmul(a, b) -> Tensor:
    """Matrix product; stacked (batched) operands must share batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim > 2 and a.data.shape[:-2] != b.data.shape[:-2]:
        raise ValueError("batched matmul requires identical batch dims")
    out = a.data @ b.data

    def grad_a(g):
        return g @ np.swapaxes(b.data, -1, -2)

    def grad_b(g):
        return np.swapaxes(a.data, -1, -2) @ g

    return Tensor._make(out, "matmul", (a, b), (grad_a, grad_b))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._make(out, "exp", (a,), (lambda g: g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)
    return Tensor._make(out, "log", (a,), (lambda g: g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor._make(out, "sqrt", (a,), (lambda g: g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._make(out, "tanh", (a,), (lambda g: g * (1.0 - out * out),))


def erf(a) -> Tensor:
    a = as_tensor(a)
    out = _special.erf(a.data)
    coeff = 2.0 / np.sqrt(np.pi)
    return Tensor._make(out, "erf", (a,),
                        (lambda g: g * coeff * np.exp(-a.data * a.data),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _special.expit(a.data)
    return Tensor._make(out, "sigmoid", (a,), (lambda g: g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    """log(1 + e^x), computed without overflow; gradient is sigmoid(x)."""
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return Tensor._make(out, "softplus", (a,),
                        (lambda g: g * _special.expit(a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return Tensor._make(out, "relu", (a,),
                        (lambda g: g * (a.data > 0.0),))


def clamp_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    c = float(floor)
    out = np.maximum(a.data, c)
    return Tensor._make(out, "clamp_min", (a,),
                        (lambda g: g * (a.data > c),))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy() if np.ndim(g) else \
                np.full(a.data.shape, g)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.data.shape).copy()

    return Tensor._make(np.asarray(out), "sum", (a,), (grad_fn,))


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        n = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return Tensor._make(out, "reshape", (a,),
                        (lambda g: g.reshape(a.data.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return Tensor._make(out, "transpose", (a,),
                        (lambda g: g.transpose(inv),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in tensors])

    def make_fn(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        sl = tuple(sl)
        return lambda g: g[sl]

    return Tensor._make(out, "concat", tuple(tensors),
                        tuple(make_fn(i) for i in range(len(tensors))))


def conv1d(x, w, b, padding: str = "same") -> Tensor:
    """1-d convolution, stride 1. x: [m, C, L], w: [F, C, k], b: [F]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    m, cin, length = x.data.shape
    fout, cin_w, k = w.data.shape
    if cin != cin_w:
        raise ValueError("channel mismatch in conv1d")
    if padding == "same":
        lo = (k - 1) // 2
        hi = k - 1 - lo
    elif padding == "valid":
        lo = hi = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (lo, hi)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
    out = np.einsum("mclk,fck->mfl", windows, w.data, optimize=True) \
        + b.data[:, None]
    l_out = out.shape[2]

    def grad_x(g):
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j:j + l_out] += np.einsum("mfl,fc->mcl", g, w.data[:, :, j],
                                                optimize=True)
        return gxp[:, :, lo:lo + length] if (lo or hi) else gxp

    def grad_w(g):
        return np.einsum("mfl,mclk->fck", g, windows, optimize=True)

    def grad_b(g):
        return g.sum(axis=(0, 2))

    return Tensor._make(out, "conv1d", (x, w, b), (grad_x, grad_w, grad_b))


def grad_reverse(a, kappa: float) -> Tensor:
    """Identity forward; backward multiplies the incoming gradient by -kappa."""
    a = as_tensor(a)
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    k = float(kappa)
    return Tensor._make(a.data.copy(), "grad_reverse", (a,),
                        (lambda g: -k * g,))
