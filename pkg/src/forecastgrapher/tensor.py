"""Dense tensors with reverse-mode differentiation and an Adam optimizer.

Tensors wrap numpy arrays. Every differentiable operation records its
parents and a closure mapping the output gradient to parent gradients;
``backward`` walks that graph in reverse topological order. Leading axes
broadcast like numpy, so the same ops serve single samples and batches.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ConfigError(ValueError):
    """Raised for invalid configuration values."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out axes that numpy broadcasting introduced or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An immutable array node in the computation graph."""

    __array_priority__ = 100

    def __init__(self, data, parents: Sequence["Tensor"] = (), grad_fn: Callable | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _infer_dtype(data))
        self.data = arr
        self._parents = tuple(parents)
        self._grad_fn = grad_fn
        self.requires_grad = any(p.requires_grad for p in self._parents)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(shape={self.shape}, data={self.data!r})"

    def __len__(self) -> int:
        return len(self.data)

    def backward(self) -> None:
        backward(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def _infer_dtype(data):
    if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
        return data.dtype
    return DEFAULT_DTYPE


class Parameter(Tensor):
    """A trainable leaf tensor carrying its gradient and Adam state.

    ``grad`` accumulates across backward calls until zeroed by
    :func:`adam_step` or :meth:`zero_grad`. A frozen parameter
    (``trainable=False``) takes part in forward passes but never receives
    gradients or updates.
    """

    def __init__(self, data, name: str = "", trainable: bool = True, dtype=None):
        super().__init__(data, dtype=dtype)
        self.data = np.array(self.data, copy=True)
        self.name = name
        self.trainable = trainable
        self.requires_grad = trainable
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def astype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.adam_m = self.adam_m.astype(dtype)
        self.adam_v = self.adam_v.astype(dtype)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # bare scalars/arrays adopt the dtype of the tensor operand
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------------------
# graph traversal


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable trainable Parameter."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        parent_grads = node._grad_fn(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = grads[key] + pg if key in grads else pg


_grad_enabled = True


@contextmanager
def no_grad():
    """Evaluate without recording the graph (inference)."""
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = previous


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    out._grad_fn = grad_fn if out.requires_grad else None
    out.grad = None
    return out


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g / b.data, a.shape),
                                         _unbroadcast(-g * a.data / b.data**2, b.shape)))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def absolute(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (np.sign(a.data) * g,))


_relu_log: list[np.ndarray] | None = None


@contextmanager
def record_relu_masks():
    """Collect the activation pattern of every relu evaluated inside the block.

    Gradient checks use this to detect finite-difference stencils that
    straddle a relu kink.
    """
    global _relu_log
    previous, _relu_log = _relu_log, []
    try:
        yield _relu_log
    finally:
        _relu_log = previous


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    mask = a.data > 0
    if _relu_log is not None:
        _relu_log.append(mask)
    return _make(np.where(mask, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), grad_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def getitem(a: Tensor, index) -> Tensor:
    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), grad_fn)


def take_rows(table: Tensor, idx) -> Tensor:
    """Gather rows ``table[idx]``; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"row index out of range [0, {table.shape[0]}): {idx}")

    def grad_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(table.data[idx], (table,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, grad_fn)


def split(a: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Contiguous split of ``a`` along ``axis`` into pieces of the given sizes."""
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to extent {a.shape[axis]}")
    pieces = []
    start = 0
    ax = axis % a.ndim
    for size in sizes:
        index = (slice(None),) * ax + (slice(start, start + size),)
        pieces.append(getitem(a, index))
        start += size
    return pieces


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _make(out, (a, b), grad_fn)


def row_softmax(m: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by subtracting each row's max."""
    shifted = m.data - m.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (m,), grad_fn)


def circular_windows(x: np.ndarray, k: int) -> np.ndarray:
    """``out[b][..., a] = x[..., (a + b) mod D]`` for b in [0, k), stacked on a new axis 0."""
    return np.stack([np.roll(x, -b, axis=-1) for b in range(k)], axis=0)


def circular_conv(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Raw periodic convolution without bias or activation.

    ``x`` is ``(..., C_in, D)``. ``w`` is a shared ``(k, C_out, C_in)`` kernel,
    or ``(B, k, C_out, C_in)`` with one kernel per leading sample of a
    ``(B, C_in, D)`` input.
    """
    k = w.shape[-3]
    if k > x.shape[-1]:
        raise ConfigError(f"kernel length {k} exceeds spatial extent {x.shape[-1]}")
    windows = circular_windows(x, k)
    if w.ndim == 3:
        return np.einsum("k...jd,kij->...id", windows, w, optimize=True)
    return np.einsum("kbjd,bkij->bid", windows, w, optimize=True)


def conv1d_circular(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Periodic 1-D convolution over the last axis.

    ``x`` has shape ``(..., C_in, D)`` and ``kernel`` ``(k, C_out, C_in)``::

        out[..., i, a] = sum_j sum_b x[..., j, (a + b) mod D] * kernel[b, i, j] + bias[i]

    The output keeps spatial extent ``D``. No activation is applied.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    k, c_out, c_in = kernel.shape
    if x.shape[-2] != c_in:
        raise ShapeError(f"conv input channels {x.shape[-2]} != kernel in-channels {c_in}")
    w = kernel.data
    out = circular_conv(x.data, w)
    parents: list[Tensor] = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None]
        parents.append(bias)

    def grad_fn(g):
        gx = gw = None
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for b in range(k):
                gx += np.roll(np.einsum("...id,ij->...jd", g, w[b]), b, axis=-1)
        if kernel.requires_grad:
            gw = np.einsum("...id,k...jd->kij", g, circular_windows(x.data, k), optimize=True)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=-1).reshape(-1, c_out).sum(axis=0))
        return tuple(grads)

    return _make(out, parents, grad_fn)


# ---------------------------------------------------------------------------
# optimizer


def adam_step(params: Iterable[Parameter], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; zeroes grads and bumps step counts."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    for p in params:
        if not p.trainable:
            continue
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1 - beta2) * g * g
        m_hat = p.adam_m / (1 - beta1**t)
        v_hat = p.adam_v / (1 - beta2**t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
        p.zero_grad()
