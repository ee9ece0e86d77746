"""Dense float64 arrays with a taped reverse-mode gradient engine.

Every operation returns a new :class:`Tensor`; when any operand requires a
gradient the result remembers its parents and a closure mapping the output
gradient to per-parent gradients.  :func:`backward` walks that tape once in
reverse topological order and accumulates into the ``grad`` field of leaf
tensors (parameters).

Broadcasting is deliberately narrow: binary elementwise operations accept
operands of identical shape, or one operand with a single element.  Row-bias
addition has its own operation, :func:`add_bias`.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import ContractError, ShapeError, TrainingDivergenceError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate operations without recording a tape."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    """A float64 array that optionally participates in differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if not np.isfinite(arr).all():
            raise ContractError(f"non-finite entries in tensor {name or ''}".rstrip())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def _wrap(cls, arr, parents=(), backward=None):
        out = cls.__new__(cls)
        out.data = arr
        out.grad = None
        out.name = None
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor._wrap(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def make_node(data, parents, backward):
    """Register a custom differentiable operation.

    ``backward`` receives the output gradient (an ndarray of ``data.shape``)
    and returns one ndarray or ``None`` per parent.
    """
    return Tensor._wrap(np.asarray(data, dtype=np.float64), parents, backward)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        ga = g @ B.T if a.requires_grad else None
        gb = A.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._wrap(A @ B, (a, b), backward)


def bmm(a, b):
    """Batched product of stacks ``(K, m, k) @ (K, k, n)``."""
    a, b = as_tensor(a), as_tensor(b)
    if (
        a.data.ndim != 3
        or b.data.ndim != 3
        or a.shape[0] != b.shape[0]
        or a.shape[2] != b.shape[1]
    ):
        raise ShapeError(f"bmm shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        ga = np.matmul(g, B.transpose(0, 2, 1)) if a.requires_grad else None
        gb = np.matmul(A.transpose(0, 2, 1), g) if b.requires_grad else None
        return ga, gb

    return Tensor._wrap(np.matmul(A, B), (a, b), backward)


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        if x.data.ndim != 2:
            raise ShapeError(f"default transpose needs a matrix, got {x.shape}")
        axes = (1, 0)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._wrap(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (g.transpose(inverse),),
    )


def reshape(x, shape):
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} to {shape}") from exc
    return Tensor._wrap(out, (x,), lambda g: (g.reshape(src),))


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of an empty list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat shape mismatch along axis {axis}: {shapes}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            if t.requires_grad
            else None
            for i, t in enumerate(tensors)
        )

    return Tensor._wrap(out, tensors, backward)


def take_rows(x, index):
    """Gather rows ``x[index]``; the gradient scatters back with summation."""
    from . import kernels

    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def backward(g):
        if g.ndim == 2:
            return (kernels.scatter_add_rows(g, index, n),)
        flat = g.reshape(g.shape[0], -1)
        return (kernels.scatter_add_rows(flat, index, n).reshape((n,) + g.shape[1:]),)

    return Tensor._wrap(x.data[index], (x,), backward)


# ---------------------------------------------------------------- elementwise


def _binary_shapes(a, b, op):
    if a.shape == b.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g, t):
    if g.shape == t.shape:
        return g
    return np.full(t.shape, g.sum())


def _operands(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    return a, b


def _unscalar(a, b):
    # a 1x1 operand broadcasts against anything; numpy needs it squeezed to 0-d
    A = a.data.reshape(()) if a.data.size == 1 and a.shape != b.shape else a.data
    B = b.data.reshape(()) if b.data.size == 1 and a.shape != b.shape else b.data
    return A, B


def add(a, b):
    a, b = _operands(a, b)
    _binary_shapes(a, b, "add")
    A, B = _unscalar(a, b)

    def backward(g):
        return (
            _reduce_to(g, a) if a.requires_grad else None,
            _reduce_to(g, b) if b.requires_grad else None,
        )

    return Tensor._wrap(A + B, (a, b), backward)


def sub(a, b):
    a, b = _operands(a, b)
    _binary_shapes(a, b, "sub")
    A, B = _unscalar(a, b)

    def backward(g):
        return (
            _reduce_to(g, a) if a.requires_grad else None,
            _reduce_to(-g, b) if b.requires_grad else None,
        )

    return Tensor._wrap(A - B, (a, b), backward)


def mul(a, b):
    a, b = _operands(a, b)
    _binary_shapes(a, b, "mul")
    A, B = _unscalar(a, b)

    def backward(g):
        return (
            _reduce_to(g * B, a) if a.requires_grad else None,
            _reduce_to(g * A, b) if b.requires_grad else None,
        )

    return Tensor._wrap(A * B, (a, b), backward)


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return Tensor._wrap(x.data * c, (x,), lambda g: (g * c,))


def add_bias(x, b):
    """``x + b`` with ``b`` a row vector broadcast over the leading axes."""
    x, b = as_tensor(x), as_tensor(b)
    width = x.shape[-1]
    if b.data.size != width:
        raise ShapeError(f"add_bias: bias {b.shape} does not match width {width}")
    bshape = b.shape

    def backward(g):
        gb = g.reshape(-1, width).sum(axis=0).reshape(bshape) if b.requires_grad else None
        return (g if x.requires_grad else None), gb

    return Tensor._wrap(x.data + b.data.reshape(width), (x, b), backward)


def identity(x):
    return as_tensor(x)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._wrap(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope)
    return Tensor._wrap(x.data * factor, (x,), lambda g: (g * factor,))


def elu(x, alpha=1.0):
    from . import kernels

    x = as_tensor(x)
    alpha = float(alpha)
    out = kernels.elu_forward(x.data, alpha)
    return Tensor._wrap(out, (x,), lambda g: (kernels.elu_backward(out, g, alpha),))


def sigmoid(x):
    x = as_tensor(x)
    X = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(X))
    out = np.where(X >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor._wrap(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return Tensor._wrap(out, (x,), lambda g: (g * (1.0 - out * out),))


ACTIVATIONS = {
    "elu": elu,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "leaky_relu": leaky_relu,
    "identity": identity,
}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ContractError(f"unknown activation {name!r}") from None


# ---------------------------------------------------------------- reductions


def sum_all(x):
    x = as_tensor(x)
    shape = x.shape
    return Tensor._wrap(
        np.array([[x.data.sum()]]), (x,), lambda g: (np.full(shape, g.item()),)
    )


def mean_all(x):
    x = as_tensor(x)
    shape, n = x.shape, x.data.size
    return Tensor._wrap(
        np.array([[x.data.mean()]]), (x,), lambda g: (np.full(shape, g.item() / n),)
    )


def mean_axis(x, axis):
    x = as_tensor(x)
    shape, n = x.shape, x.shape[axis]

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return Tensor._wrap(x.data.mean(axis=axis), (x,), backward)


def abs_sum(x):
    """L1 norm; the subgradient at exactly zero is taken as zero."""
    x = as_tensor(x)
    sign = np.sign(x.data)
    return Tensor._wrap(
        np.array([[np.abs(x.data).sum()]]), (x,), lambda g: (g.item() * sign,)
    )


def sq_sum(x):
    x = as_tensor(x)
    X = x.data
    return Tensor._wrap(
        np.array([[np.vdot(X, X)]]), (x,), lambda g: (2.0 * g.item() * X,)
    )


def mse(a, b):
    """Mean squared difference over all entries."""
    a, b = _operands(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: incompatible shapes {a.shape} and {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        gd = (2.0 * g.item() / n) * diff
        return (gd if a.requires_grad else None, -gd if b.requires_grad else None)

    return Tensor._wrap(np.array([[np.vdot(diff, diff) / n]]), (a, b), backward)


# ---------------------------------------------------------------- softmax family


def _mask_array(mask, shape):
    if isinstance(mask, np.ndarray) and mask.dtype == bool:
        if mask.shape != shape:
            raise ShapeError(f"mask shape {mask.shape} != logits shape {shape}")
        return mask
    out = np.zeros(shape, dtype=bool)
    if len(mask) != shape[0]:
        raise ShapeError(f"mask has {len(mask)} rows, logits have {shape[0]}")
    for r, idx in enumerate(mask):
        out[r, list(idx)] = True
    return out


def row_softmax(logits, mask=None):
    """Softmax along each row restricted to ``mask``; masked-out entries are 0.

    ``mask`` is a boolean array of the logits' shape or one index collection per
    row.  ``None`` means every entry participates.
    """
    x = as_tensor(logits)
    if x.data.ndim != 2:
        raise ShapeError(f"row_softmax expects a matrix, got {x.shape}")
    m = np.ones(x.shape, dtype=bool) if mask is None else _mask_array(mask, x.shape)
    empty = ~m.any(axis=1)
    if empty.any():
        raise ContractError(
            f"degenerate neighbourhood: empty mask in row {int(np.flatnonzero(empty)[0])}"
        )
    z = np.where(m, x.data, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(m, np.exp(z), 0.0)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (out * g).sum(axis=1, keepdims=True)),)

    return Tensor._wrap(out, (x,), backward)


def log_softmax(x):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return Tensor._wrap(out, (x,), backward)


def softmax_np(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels, mask=None):
    """Mean negative log-likelihood of ``labels`` over the rows in ``mask``.

    Rows outside the mask contribute nothing, so their logits receive an
    exactly-zero gradient.
    """
    x = as_tensor(logits)
    labels = np.asarray(labels)
    n = x.shape[0]
    rows = np.arange(n) if mask is None else np.asarray(mask)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    if rows.size == 0:
        raise ContractError("cross_entropy: empty supervision mask")
    y = labels[rows].astype(np.int64)
    if (y < 0).any() or (y >= x.shape[1]).any():
        raise ContractError("cross_entropy: label outside class range on a masked row")
    sub_logits = x.data[rows]
    z = sub_logits - sub_logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(rows.size), y]
    p = np.exp(z - lse[:, None])

    def backward(g):
        grad = np.zeros_like(x.data)
        local = p.copy()
        local[np.arange(rows.size), y] -= 1.0
        grad[rows] = local * (g.item() / rows.size)
        return (grad,)

    return Tensor._wrap(np.array([[nll.mean()]]), (x,), backward)


# ---------------------------------------------------------------- backward pass


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
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


def backward(output):
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return
    grads = {id(output): np.ones_like(output.data)}
    # buffers created here by summation may be updated in place; arrays handed
    # back by backward closures may alias each other and must not be
    owned = set()
    for node in reversed(_topological(output)):
        key = id(node)
        g = grads.pop(key, None)
        owned.discard(key)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pkey = id(parent)
            if pkey not in grads:
                grads[pkey] = pg
            elif pkey in owned:
                grads[pkey] += pg
            else:
                grads[pkey] = grads[pkey] + pg
                owned.add(pkey)


# ---------------------------------------------------------------- parameters


class ParameterSet:
    """Named trainable tensors plus the optimiser's moment estimates."""

    def __init__(self):
        self._params = {}
        self.state = {}
        self.step_count = 0

    def add(self, name, value):
        if name in self._params:
            raise ContractError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def glorot(self, name, shape, rng):
        fan_in, fan_out = shape[-2], shape[-1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-limit, limit, size=shape))

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def count(self):
        return sum(t.data.size for t in self._params.values())

    def snapshot(self):
        return {k: t.data.copy() for k, t in self._params.items()}


def adam_step(params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected adaptive-moment update; moments live in ``params.state``.

    Parameters without a gradient are left untouched.  A non-finite gradient
    raises :class:`TrainingDivergenceError` before anything is modified.
    """
    b1, b2 = betas
    for name, t in params.items():
        if t.grad is not None and not np.isfinite(t.grad).all():
            raise TrainingDivergenceError(f"non-finite gradient for parameter {name!r}")
    params.step_count += 1
    step = params.step_count
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for name, t in params.items():
        g = t.grad
        if g is None:
            continue
        m, v = params.state.get(name, (None, None))
        if m is None:
            m = np.zeros_like(t.data)
            v = np.zeros_like(t.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        params.state[name] = (m, v)
        t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params
