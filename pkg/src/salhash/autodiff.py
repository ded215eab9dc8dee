"""Minimal reverse-mode tensor engine.

Everything is float64. Operations executed inside a ``with Tape():`` block
are recorded when any input requires gradients; ``backward(loss)`` replays
the active tape once in reverse execution order (a topological order by
construction) and accumulates gradients into every reachable tensor with
``requires_grad``. Outside a tape, ops are plain numpy evaluation.

Subgradient conventions at kinks: relu'(0) = 0, abs'(0) = 0, hinge'(0) = 0;
max-pool and reduce_min/max break ties to the first element in row-major
order, so forward and backward are fully deterministic.
"""

import contextlib

import numpy as np

from . import kernels
from .errors import ShapeError

_TAPE_STACK = []


class Tape:
    """Ordered record of executed ops for one forward/backward episode."""

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


class _Node:
    __slots__ = ("out", "inputs", "grad_fn")

    def __init__(self, out, inputs, grad_fn):
        self.out = out
        self.inputs = inputs
        self.grad_fn = grad_fn


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """n-d float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; constants wrap as non-grad tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def sum(self):
        return reduce_sum(self)

    def mean(self):
        return mean(self)

    def abs(self):
        return abs_(self)

    def reshape(self, shape):
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class Parameter:
    """Named trainable tensor with an SGD momentum buffer."""

    def __init__(self, name, data):
        self.name = name
        self.tensor = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self.momentum = np.zeros_like(self.tensor.data)

    @property
    def data(self):
        return self.tensor.data

    @data.setter
    def data(self, value):
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.tensor.data.shape:
            raise ShapeError(f"parameter {self.name}: cannot assign {value.shape} over {self.tensor.data.shape}")
        self.tensor.data = value

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.data.shape})"


@contextlib.contextmanager
def frozen(params):
    """Temporarily drop requires_grad on the given parameters."""
    tensors = [p.tensor for p in params]
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, s in zip(tensors, saved):
            t.requires_grad = s


def _record(out_data, inputs, grad_fn):
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._nodes.append(_Node(out, inputs, grad_fn))
    return out


def _accumulate(tensor, grad):
    if grad is None or not tensor.requires_grad:
        return
    tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def backward(loss):
    """Accumulate d(loss)/d(t) into .grad of every reachable tensor.

    Must run inside the ``with Tape():`` block that recorded ``loss``.
    """
    tape = _active_tape()
    if tape is None:
        raise RuntimeError("backward() called with no active Tape")
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {getattr(loss, 'shape', None)}")
    _accumulate_seed = np.ones_like(loss.data)
    loss.grad = _accumulate_seed if loss.grad is None else loss.grad + _accumulate_seed
    for node in reversed(tape._nodes):
        gout = node.out.grad
        if gout is None:
            continue
        for t, g in zip(node.inputs, node.grad_fn(gout)):
            _accumulate(t, g)


def sgd_step(params, lr, momentum=0.0, weight_decay=0.0):
    """v <- momentum*v + grad + wd*theta; theta <- theta - lr*v; grads cleared."""
    params = list(params)
    for p in params:
        if p.tensor.grad is None:
            raise ValueError(f"sgd_step: parameter {p.name} has no gradient")
    for p in params:
        v = momentum * p.momentum + p.tensor.grad + weight_decay * p.tensor.data
        p.momentum = v
        p.tensor.data = p.tensor.data - lr * v
        p.tensor.grad = None


def zero_grads(params):
    for p in params:
        p.tensor.grad = None


# --- broadcasting helpers -------------------------------------------------


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(name, a, b):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None


# --- elementwise primitives -----------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("elementwise_add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("elementwise_sub", a, b)
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("elementwise_mul", a, b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("elementwise_div", a, b)
    return _record(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def relu(x):
    x = _as_tensor(x)
    return _record(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0.0),))


def hinge(x):
    """max(x, 0) with subgradient 0 at the kink (same rule as relu)."""
    x = _as_tensor(x)
    return _record(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0.0),))


def abs_(x):
    x = _as_tensor(x)
    return _record(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def square(x):
    x = _as_tensor(x)
    return _record(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


# --- reductions / reshapes ------------------------------------------------


def reduce_sum(x):
    x = _as_tensor(x)
    return _record(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


def mean(x):
    x = _as_tensor(x)
    n = x.data.size
    return _record(np.array(x.data.sum() / n), (x,), lambda g: (np.broadcast_to(g / n, x.data.shape).copy(),))


def _reduce_extreme(x, axes, keepdims, take_max):
    data = x.data
    if axes is None:
        axes = tuple(range(data.ndim))
    axes = tuple(ax % data.ndim for ax in axes)
    kept = tuple(ax for ax in range(data.ndim) if ax not in axes)
    perm = kept + axes
    moved = data.transpose(perm)
    lead = moved.shape[: len(kept)]
    flat = moved.reshape(int(np.prod(lead, dtype=np.int64)) if lead else 1, -1)
    idx = np.argmax(flat, axis=1) if take_max else np.argmin(flat, axis=1)  # first hit wins ties
    vals = np.take_along_axis(flat, idx[:, None], axis=1)[:, 0]

    out_shape = list(lead)
    if keepdims:
        out_shape = [data.shape[ax] if ax in kept else 1 for ax in range(data.ndim)]
    out = vals.reshape(out_shape) if out_shape else np.array(vals[0])

    def grad_fn(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[:, None], g.reshape(-1, 1), axis=1)
        gx = gflat.reshape(moved.shape).transpose(np.argsort(perm))
        return (gx,)

    return _record(out, (x,), grad_fn)


def reduce_max(x, axes=None, keepdims=False):
    return _reduce_extreme(_as_tensor(x), axes, keepdims, take_max=True)


def reduce_min(x, axes=None, keepdims=False):
    return _reduce_extreme(_as_tensor(x), axes, keepdims, take_max=False)


def reshape(x, shape):
    x = _as_tensor(x)
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.data.shape),))


def transpose(x):
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {x.data.shape}")
    return _record(x.data.T.copy(), (x,), lambda g: (g.T.copy(),))


# --- linear algebra -------------------------------------------------------


def inner_product(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError(f"inner_product: need equal-length vectors, got {a.data.shape} and {b.data.shape}")
    return _record(np.array(a.data @ b.data), (a, b), lambda g: (g * b.data, g * a.data))


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    return _record(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, w, b):
    """Affine map: (N, D) @ (O, D)^T + (O,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"linear: input {x.data.shape} incompatible with weight {w.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"linear: bias {b.data.shape} incompatible with weight {w.data.shape}")
    out = x.data @ w.data.T + b.data
    return _record(out, (x, w, b), lambda g: (g @ w.data, g.T @ x.data, g.sum(axis=0)))


# --- structured ops backed by the kernel layer ------------------------------


def conv2d(x, w, b, stride=1, pad=0):
    """2-D correlation with zero padding: (N,C,H,W) x (F,C,kh,kw) -> (N,F,Ho,Wo)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"conv2d: input {x.data.shape} incompatible with kernel {w.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"conv2d: bias {b.data.shape} incompatible with kernel {w.data.shape}")
    kh, kw = w.data.shape[2], w.data.shape[3]
    if x.data.shape[2] + 2 * pad < kh or x.data.shape[3] + 2 * pad < kw:
        raise ShapeError(f"conv2d: kernel {w.data.shape} larger than padded input {x.data.shape}")
    out = kernels.conv2d_forward(x.data, w.data, b.data, stride, pad)

    def grad_fn(g):
        dx, dw, db = kernels.conv2d_backward(x.data, w.data, stride, pad, g)
        return dx, dw, db

    return _record(out, (x, w, b), grad_fn)


def max_pool2d(x, size):
    """Non-overlapping max pooling; spatial dims must divide by `size`."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2d: expected (N,C,H,W), got {x.data.shape}")
    if x.data.shape[2] % size or x.data.shape[3] % size:
        raise ShapeError(f"max_pool2d: spatial dims of {x.data.shape} not divisible by {size}")
    out, arg = kernels.maxpool2d_forward(x.data, size)
    shape = x.data.shape
    return _record(out, (x,), lambda g: (kernels.maxpool2d_backward(arg, shape, size, g),))


def bilinear_upsample2x(x):
    """Bilinear x2 upsampling of (N,C,H,W) score maps (edge replicate)."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"bilinear_upsample2x: expected (N,C,H,W), got {x.data.shape}")
    shape = x.data.shape
    return _record(kernels.upsample2x_forward(x.data), (x,), lambda g: (kernels.upsample2x_backward(shape, g),))


# --- verification ----------------------------------------------------------


def grad_check(f, x, eps=1e-5):
    """Max relative error between tape gradients and central differences.

    ``f`` maps a Tensor to a scalar Tensor and must be pure. Error metric:
    max over elements of |analytic - numeric| / max(1, |numeric|).
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape():
        out = f(probe)
        if out.data.size != 1:
            raise ShapeError(f"grad_check: f must be scalar-valued, got shape {out.data.shape}")
        backward(out)
    analytic = np.zeros_like(probe.data) if probe.grad is None else probe.grad

    flat = x.data.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + eps
        hi = f(Tensor(bumped.reshape(x.data.shape))).item()
        bumped[i] = flat[i] - eps
        lo = f(Tensor(bumped.reshape(x.data.shape))).item()
        numeric[i] = (hi - lo) / (2.0 * eps)
    numeric = numeric.reshape(x.data.shape)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
