"""Small dense reverse-mode autodiff engine over numpy arrays, plus Adam.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure propagating the upstream gradient to them. ``backward`` walks the
recorded graph once in reverse topological order, summing gradients over
fan-out.

Binary elementwise ops require identical shapes, or one operand that is a
scalar (a Python number or a 0-d tensor). Anything else must be tiled
explicitly with :func:`tile`, which keeps shape bugs loud.
"""

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _op="leaf", dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = None
        self.op = _op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: scale(self, -1.0)

    def __getitem__(self, idx):
        raise TypeError("use gather() for differentiable indexing")


def tensor(data, requires_grad=False, dtype=None, name=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def _wrap(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, op, backward_fn):
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, _parents=parents if req else (), _op=op)
    if req:
        out._backward = backward_fn
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True).reshape(t.data.shape)
    else:
        t.grad += g


def _check_binary(a, b, op):
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (tile explicitly)")


def _reduce_to(g, shape):
    return g if g.shape == shape else np.asarray(g.sum())


# ---------------------------------------------------------------------------
# elementwise

def add(a, b):
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _check_binary(a, b, "add")

    def bw(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, _reduce_to(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b):
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _check_binary(a, b, "sub")

    def bw(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, -_reduce_to(g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b):
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _check_binary(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            _accum(a, _reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _reduce_to(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", bw)


def scale(x, c):
    """Multiply by a constant scalar."""
    x = _wrap(x)
    c = float(c)
    return _make(x.data * x.data.dtype.type(c), (x,), "scale", lambda g: _accum(x, g * c))


def div(x, c):
    """Divide by a constant scalar (tensor / tensor is not supported)."""
    if isinstance(c, Tensor):
        raise TypeError("div: divisor must be a constant scalar")
    c = float(c)
    if c == 0.0:
        raise ZeroDivisionError("div: division by zero")
    return scale(x, 1.0 / c)


def square(x):
    x = _wrap(x)
    return _make(x.data * x.data, (x,), "square", lambda g: _accum(x, 2.0 * g * x.data))


def sqrt(x):
    """Elementwise square root. Negative inputs raise; the adjoint at exactly
    zero is taken as zero rather than infinity."""
    x = _wrap(x)
    if np.any(x.data < 0):
        raise ValueError("sqrt: negative input")
    y = np.sqrt(x.data)

    def bw(g):
        safe = np.where(y > 0, y, 1.0)
        _accum(x, np.where(y > 0, g / (2.0 * safe), 0.0))

    return _make(y, (x,), "sqrt", bw)


def reciprocal(x):
    """Elementwise ``1 / x``; zero entries raise."""
    x = _wrap(x)
    if np.any(x.data == 0):
        raise ZeroDivisionError("reciprocal: zero input")
    y = 1.0 / x.data
    return _make(y, (x,), "reciprocal", lambda g: _accum(x, -g * y * y))


def clamp_min(x, floor):
    """Elementwise ``max(x, floor)`` for a constant ``floor``; clamped entries get no gradient."""
    x = _wrap(x)
    mask = x.data > floor
    y = np.where(mask, x.data, x.data.dtype.type(floor))
    return _make(y, (x,), "clamp_min", lambda g: _accum(x, g * mask))


def relu(x):
    x = _wrap(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), "relu", lambda g: _accum(x, g * mask))


def tanh(x):
    x = _wrap(x)
    y = np.tanh(x.data)
    return _make(y, (x,), "tanh", lambda g: _accum(x, g * (1.0 - y * y)))


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a, b):
    """Matrix product; operands of rank > 2 are batched over identical leading dims."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(a.data @ b.data, (a, b), "matmul", bw)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` over the last axis of ``x`` (bias added per row)."""
    x, weight = _wrap(x), _wrap(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    y = x2 @ weight.data
    if bias is not None:
        y = y + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, weight.shape[1])
        if x.requires_grad:
            _accum(x, (g2 @ weight.data.T).reshape(x.shape))
        if weight.requires_grad:
            _accum(weight, x2.T @ g2)
        if bias is not None and bias.requires_grad:
            _accum(bias, g2.sum(axis=0))

    return _make(y.reshape(lead + (weight.shape[1],)), parents, "linear", bw)


def reshape(x, shape):
    x = _wrap(x)
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from None
    return _make(y, (x,), "reshape", lambda g: _accum(x, g.reshape(x.shape)))


def transpose(x, axes=None):
    x = _wrap(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: bad axes {axes} for rank {x.ndim}")
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), "transpose", lambda g: _accum(x, np.transpose(g, inv)))


def concat(tensors, axis=0):
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[d] != ts[0].shape[d] for d in range(nd) if d != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, sizes, axis=ax)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), "concat", bw)


def tile(x, reps):
    """Explicit repetition (``np.tile`` semantics, ``len(reps) == x.ndim``)."""
    x = _wrap(x)
    reps = tuple(int(r) for r in reps)
    if len(reps) != x.ndim:
        raise ShapeError(f"tile: reps {reps} must match rank {x.ndim}")
    y = np.tile(x.data, reps)

    def bw(g):
        split = []
        for r, s in zip(reps, x.shape):
            split.extend([r, s])
        _accum(x, g.reshape(split).sum(axis=tuple(range(0, 2 * x.ndim, 2))))

    return _make(y, (x,), "tile", bw)


def gather(x, index, axis=0):
    """Select slices of ``x`` along ``axis`` with an integer index array of any
    shape; the result has shape ``x.shape[:axis] + index.shape + x.shape[axis+1:]``."""
    x = _wrap(x)
    index = np.asarray(index)
    if index.dtype.kind not in "iu":
        raise TypeError("gather: index must be integer")
    ax = axis % x.ndim
    n = x.shape[ax]
    if index.size and (index.min() < -n or index.max() >= n):
        raise IndexError(f"gather: index out of range for axis of size {n}")
    index = np.where(index < 0, index + n, index)
    y = np.take(x.data, index, axis=ax)

    def bw(g):
        gx = np.zeros_like(x.data)
        if ax == 0:
            flat = g.reshape((index.size,) + x.shape[1:])
            np.add.at(gx, index.ravel(), flat)
        else:
            gm = np.moveaxis(gx, ax, 0)
            gg = np.moveaxis(g.reshape(x.shape[:ax] + (index.size,) + x.shape[ax + 1:]), ax, 0)
            np.add.at(gm, index.ravel(), gg)
        _accum(x, gx)

    return _make(y, (x,), "gather", bw)


# ---------------------------------------------------------------------------
# reductions

def _expand(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def sum(x, axis=None):
    x = _wrap(x)
    return _make(np.asarray(x.data.sum(axis=axis)), (x,), "sum", lambda g: _accum(x, _expand(g, x.shape, axis)))


def mean(x, axis=None):
    x = _wrap(x)
    count = x.data.size if axis is None else x.shape[axis]
    return _make(
        np.asarray(x.data.mean(axis=axis)), (x,), "mean",
        lambda g: _accum(x, _expand(g, x.shape, axis) / count),
    )


def max(x, axis):
    """Maximum along ``axis``; the adjoint goes to the lowest-index maximizer."""
    x = _wrap(x)
    arg = np.argmax(x.data, axis=axis)
    y = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        _accum(x, gx)

    return _make(y, (x,), "max", bw)


def softmax(x, axis=-1):
    x = _wrap(x)
    if x.shape[axis] < 1:
        raise ShapeError("softmax: empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), "softmax", bw)


def norm(x, axis=-1, eps=1e-12):
    """Stabilized L2 norm ``sqrt(sum(x**2, axis) + eps)``."""
    x = _wrap(x)
    if not eps > 0:
        raise ValueError("norm: eps must be positive")
    y = np.sqrt((x.data * x.data).sum(axis=axis) + eps)
    return _make(y, (x,), "norm", lambda g: _accum(x, np.expand_dims(g / y, axis) * x.data))


# ---------------------------------------------------------------------------
# backward pass

def topological_order(root):
    """Nodes reachable from ``root`` that require grad, parents before children."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(loss, params=()):
    """Populate ``.grad`` of every tensor that ``loss`` depends on.

    ``params`` that the loss does not reach receive zero gradients. Gradients
    accumulate into existing ``.grad`` arrays, so clear them between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.requires_grad:
        order = topological_order(loss)
        _accum(loss, np.ones_like(loss.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                # intermediate gradients are no longer needed
                node.grad = None
                node._backward = None
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# optimizer

class AdamState:
    """First/second moment accumulators for a fixed list of parameters."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if not lr > 0:
        raise ValueError("adam_step: lr must be positive")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: parameter, gradient and state counts differ")
    state.step += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= update.astype(p.data.dtype)
    return params, state
