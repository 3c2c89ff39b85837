"""Small reverse-mode differentiation kernel over dense numpy arrays.

Every primitive returns a new :class:`Tensor` that remembers its parents and
a closure mapping the output gradient to parent gradients.  ``backward``
walks the recorded graph once in reverse topological order.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite value produced by {op}")
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def item(self):
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_rows(self, index)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topo_order(root):
    seen = set()
    order = []
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
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return Tensor(a.data + b.data, _parents=(a, b), op="add",
                  _backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return Tensor(a.data - b.data, _parents=(a, b), op="sub",
                  _backward=lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return Tensor(a.data * b.data, _parents=(a, b), op="mul",
                  _backward=lambda g: (_unbroadcast(g * b.data, a.shape),
                                       _unbroadcast(g * a.data, b.shape)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return Tensor(a.data @ b.data, _parents=(a, b), op="matmul",
                  _backward=lambda g: (g @ b.data.T, a.data.T @ g))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor(x.data * mask, _parents=(x,), op="relu", _backward=lambda g: (g * mask,))


def sigmoid(x):
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor(y, _parents=(x,), op="sigmoid", _backward=lambda g: (g * y * (1.0 - y),))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return Tensor(y, _parents=(x,), op="tanh", _backward=lambda g: (g * (1.0 - y * y),))


def total(x):
    x = as_tensor(x)
    return Tensor(x.data.sum(), _parents=(x,), op="sum",
                  _backward=lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x):
    x = as_tensor(x)
    n = x.data.size
    return Tensor(x.data.mean(), _parents=(x,), op="mean",
                  _backward=lambda g: (np.full(x.shape, g / n),))


def log_softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Mean over rows of -log softmax(logits)[row, label]."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy", logits.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("softmax_cross_entropy: label out of range")
    logp = log_softmax_rows(logits.data)
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (g * d / n,)

    return Tensor(loss, _parents=(logits,), op="softmax_xent", _backward=backward)


def mse(pred, target):
    """Mean squared error over all entries; gradients flow to both sides."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("mse", pred.shape, target.shape)
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        d = g * 2.0 * diff / n
        return d, -d

    return Tensor(np.mean(diff * diff), _parents=(pred, target), op="mse", _backward=backward)


def _conv_columns(x, width, dilation):
    T, _ = x.shape
    half = (width - 1) // 2
    pad = half * dilation
    xp = np.zeros((T + 2 * pad, x.shape[1]))
    xp[pad:pad + T] = x
    cols = [xp[j * dilation:j * dilation + T] for j in range(width)]
    return np.concatenate(cols, axis=1), pad


def dilated_conv1d(x, kernel, dilation=1, bias=None):
    """Same-length 1-D convolution over time.

    ``x`` is T x Din, ``kernel`` is (width*Din) x Dout with tap j occupying
    rows j*Din:(j+1)*Din and reading frame t + (j - (width-1)/2) * dilation.
    Zero padding at both ends.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 2 or kernel.data.ndim != 2:
        raise ShapeError("dilated_conv1d", x.shape, kernel.shape)
    T, din = x.shape
    if din == 0 or kernel.shape[0] % din:
        raise ShapeError("dilated_conv1d", x.shape, kernel.shape)
    width = kernel.shape[0] // din
    if width % 2 == 0:
        raise ValueError("dilated_conv1d: kernel width must be odd for same-length padding")
    if dilation < 1:
        raise ValueError("dilated_conv1d: dilation must be >= 1")
    cols, pad = _conv_columns(x.data, width, dilation)
    out = cols @ kernel.data

    def backward(g):
        dcols = g @ kernel.data.T
        dx = np.zeros((T + 2 * pad, din))
        for j in range(width):
            dx[j * dilation:j * dilation + T] += dcols[:, j * din:(j + 1) * din]
        return dx[pad:pad + T], cols.T @ g

    y = Tensor(out, _parents=(x, kernel), op="dilated_conv1d", _backward=backward)
    return y if bias is None else add(y, bias)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Tensor(data, _parents=tuple(tensors), op="concat", _backward=backward)


def slice_rows(x, index):
    """Basic or fancy indexing; the backward pass scatters into zeros."""
    x = as_tensor(x)
    data = x.data[index]

    def backward(g):
        d = np.zeros_like(x.data)
        np.add.at(d, index, g)
        return (d,)

    return Tensor(data, _parents=(x,), op="slice", _backward=backward)


def reshape(x, shape):
    x = as_tensor(x)
    return Tensor(x.data.reshape(shape), _parents=(x,), op="reshape",
                  _backward=lambda g: (g.reshape(x.shape),))


def custom(value, parent, grad):
    """Scalar node whose gradient w.r.t. ``parent`` is the precomputed ``grad``."""
    parent = as_tensor(parent)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != parent.shape:
        raise ShapeError("custom", grad.shape, parent.shape)
    return Tensor(value, _parents=(parent,), op="custom", _backward=lambda g: (g * grad,))


def batchnorm(x, eps=1e-5):
    """Per-column standardization over rows (no affine, batch statistics)."""
    x = as_tensor(x)
    mu = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    n = x.shape[0]

    def backward(g):
        return (inv / n * (n * g - g.sum(axis=0) - xhat * (g * xhat).sum(axis=0)),)

    return Tensor(xhat, _parents=(x,), op="batchnorm", _backward=backward)


def dump_graph(root):
    """Text listing of the recorded graph, one node per line in execution order."""
    order = list(reversed(_topo_order(root)))
    ids = {id(n): i for i, n in enumerate(order)}
    lines = []
    for i, node in enumerate(order):
        parents = ",".join(str(ids[id(p)]) for p in node._parents)
        lines.append(f"%{i} = {node.op}({parents}) shape={node.shape}")
    return "\n".join(lines)


def grad_check(f, point, eps=1e-5):
    """Max relative error between reverse-mode and central-difference gradients.

    ``point`` is an array or a dict of arrays; ``f`` receives the matching
    Tensor (or dict of Tensors) and returns a scalar Tensor.  The error per
    coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    """
    is_dict = isinstance(point, dict)
    # C order so the flat view below aliases the array being evaluated
    arrays = {k: np.array(v, dtype=np.float64, order="C") for k, v in (point.items() if is_dict else [("x", point)])}

    def evaluate(values, track):
        leaves = {k: Tensor(v, requires_grad=track) for k, v in values.items()}
        out = f(leaves if is_dict else leaves["x"])
        value = float(np.asarray(out.data))
        if not np.isfinite(value):
            raise NonFiniteError("grad_check: function value is not finite")
        return out, leaves

    out, leaves = evaluate(arrays, True)
    out.backward()
    worst = 0.0
    for name, base in arrays.items():
        g_ad = leaves[name].grad
        if g_ad is None:
            g_ad = np.zeros_like(base)
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(evaluate(arrays, False)[0].data)
            flat[i] = orig - eps
            fm = float(evaluate(arrays, False)[0].data)
            flat[i] = orig
            g_fd = (fp - fm) / (2 * eps)
            ga = float(g_ad.reshape(-1)[i])
            err = abs(ga - g_fd) / max(1.0, abs(ga), abs(g_fd))
            worst = max(worst, err)
    return worst
