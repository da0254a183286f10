"""Dense tensors with reverse-mode automatic differentiation.

Only the operations a small transformer encoder needs are provided, most of
them fused (layer norm, softmax, cross entropy) so that each has a single
hand-written backward rule. Values are numpy arrays; float32 is the default
and float64 is used for gradient checking.

Every op that touches a tensor with ``requires_grad`` records its parents
and a closure mapping the output gradient to the parent gradients.
``backward`` walks that record once in reverse topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import erf

from .errors import NonScalarLoss, ShapeMismatch

DEFAULT_DTYPE = np.float32
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, finite differences)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: add(self, scale(as_tensor(other, self.dtype), -1.0))
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: scale(self, -1.0)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, c):
    c = float(c)
    return _make(a.data * a.data.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),))


def matmul(a, b):
    """Matrix product over the last two axes, with numpy batch broadcasting."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatch("matmul", a.shape, b.shape) from None
    ad, bd = a.data, b.data

    def back(g):
        if bd.ndim == 2:
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return _unbroadcast(ga, ad.shape), gb
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), back)


def linear(x, w, b=None):
    """``x @ w + b`` for 2-D ``w``; fused so the backward needs no broadcasting passes."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeMismatch("linear", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeMismatch("linear bias", w.shape, b.shape)
    xd, wd = x.data, w.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd
    if b is not None:
        out += b.data
    out = out.reshape(*lead, wd.shape[1])

    def back(g):
        # 2-D products keep numpy on the BLAS fast path
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(*lead, wd.shape[0])
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, back)


def reshape(x, shape):
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def tsum(x):
    """Sum of all entries, as a 0-d tensor."""
    shape, dt = x.shape, x.dtype
    return _make(np.asarray(x.data.sum(), dtype=dt), (x,), lambda g: (np.broadcast_to(g, shape).astype(dt),))


def mean(x):
    n = x.data.size
    return scale(tsum(x), 1.0 / n)


# ---------------------------------------------------------------------------
# network ops


def embedding_lookup(table, ids):
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("embedding ids must be integers")
    if table.ndim != 2:
        raise ShapeMismatch("embedding_lookup", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")
    n, dt = table.shape, table.dtype

    def back(g):
        gt = np.zeros(n, dtype=dt)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, n[1]))
        return (gt,)

    return _make(table.data[ids], (table,), back)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    h = x.shape[-1]
    if gain.shape != (h,) or bias.shape != (h,):
        raise ShapeMismatch("layer_norm", x.shape, gain.shape, bias.shape)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = xc * rstd
    gd = gain.data

    def back(g):
        dxhat = g * gd
        gx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + bias.data, (x, gain, bias), back)


def _softmax(xd, axis):
    z = xd - xd.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


def softmax(x, axis=-1):
    y = _softmax(x.data, axis)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), back)


_SQRT1_2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    """Exact GELU, ``x * Phi(x)``."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * xd.dtype.type(_SQRT1_2)))

    def back(g):
        pdf = np.exp(-0.5 * xd * xd) * xd.dtype.type(_INV_SQRT_2PI)
        return (g * (cdf + xd * pdf),)

    return _make(xd * cdf, (x,), back)


def dropout(x, p, rng, training=True):
    if not training or p <= 0.0:
        return x
    if p >= 1.0:
        raise ValueError("dropout probability must be < 1")
    keep = (rng.random(x.shape, dtype=np.float32) >= p).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy(logits, targets, ignore_index=-100, reduction="mean", normalizer=None):
    """Softmax cross entropy over the last axis of ``logits``.

    Positions whose target equals ``ignore_index`` contribute nothing. With
    ``reduction="mean"`` the sum is divided by the number of counted
    positions, or by ``normalizer`` when given (used to make gradient
    accumulation across micro-batches match one large batch exactly).
    """
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ShapeMismatch("cross_entropy", logits.shape, targets.shape)
    c = logits.shape[-1]
    z = logits.data.reshape(-1, c)
    t = targets.reshape(-1)
    valid = t != ignore_index
    if np.any(valid & ((t < 0) | (t >= c))):
        raise IndexError(f"cross_entropy target out of range [0, {c})")
    tv = np.where(valid, t, 0)
    zmax = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)) + zmax
    nll = (lse[:, 0] - z[np.arange(len(t)), tv]) * valid
    count = int(valid.sum())
    if reduction == "sum":
        denom = 1.0
    elif reduction == "mean":
        denom = float(normalizer) if normalizer is not None else float(max(count, 1))
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    dt = logits.dtype
    loss = np.asarray(nll.sum() / denom, dtype=dt)
    shape = logits.shape

    def back(g):
        p = np.exp(z - lse)
        p[np.arange(len(t)), tv] -= 1.0
        p *= (valid / denom)[:, None].astype(dt)
        return ((p * g).reshape(shape),)

    return _make(loss, (logits,), back)


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root):
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


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad.

    The recorded graph is released afterwards; a second backward needs a
    fresh forward pass.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            grads[k] = pg if k not in grads else grads[k] + pg
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(f, params, eps=1e-5, max_coords=None, seed=0):
    """Compare analytic gradients of ``f`` with central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor built from
    ``params`` (a list of leaf Tensors, normally float64). If ``max_coords``
    is given, at most that many randomly chosen coordinates per parameter are
    checked. Returns the maximum of
    ``|analytic - numeric| / (|analytic| + |numeric| + 1e-12)``.
    """
    for p in params:
        p.grad = None
        p.requires_grad = True
    loss = f()
    backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for p in params:
            analytic = np.zeros_like(p.data) if p.grad is None else p.grad
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = rng.choice(flat.size, size=max_coords, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f().data)
                flat[i] = orig - eps
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                a = float(analytic.reshape(-1)[i])
                err = abs(a - num) / (abs(a) + abs(num) + 1e-12)
                worst = max(worst, err)
    return worst
