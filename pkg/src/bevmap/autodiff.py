"""Minimal dense-tensor reverse-mode autodiff on numpy arrays.

A Tensor wraps an ndarray. Primitive applications are recorded, in
creation order, on the active Tape; creation order is already a
topological order, so the backward pass is a single reverse sweep with
additive gradient accumulation across fan-out. Only the operations the
map-construction graph needs are provided; there are no GPU kernels and
no convolution primitive.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import ContractViolation

__all__ = [
    "Tensor",
    "Tape",
    "tape",
    "no_grad",
    "tensor",
    "parameter",
    "add", "sub", "mul", "matmul", "neg",
    "reshape", "transpose", "concat", "slice_", "gather_rows",
    "sum_", "mean_", "abs_", "sqrt_", "exp", "log", "reciprocal",
    "relu", "gelu", "sigmoid",
    "softmax", "log_softmax", "layer_norm",
    "grid_sample_bilinear", "scatter_add",
    "stop_grad",
    "mse_loss", "l1_loss", "kl_loss", "focal_class_loss",
]

_active_tape: "Tape | None" = None
_grad_enabled: bool = True


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended in creation order, which is a valid topological
    order of the graph, so the reverse sweep visits each node exactly
    once.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def record(self, t: "Tensor"):
        t._pos = len(self.nodes)
        t._tape = self
        self.nodes.append(t)

    def backward(self, root: "Tensor"):
        if root.data.size != 1:
            raise ContractViolation(
                f"backward requires a scalar root, got shape {root.shape}")
        if root._tape is not None and root._tape is not self:
            raise ContractViolation(
                "backward root was recorded on a different tape")
        if root._tape is None or root._pos is None:
            # Root was never recorded (detached, constant, or built under
            # no_grad): nothing participates, all gradients stay zero.
            return
        # Restrict the sweep to the root's ancestry.
        needed = np.zeros(len(self.nodes), dtype=bool)
        needed[root._pos] = True
        for i in range(root._pos, -1, -1):
            if not needed[i]:
                continue
            for p in self.nodes[i]._parents:
                if p._tape is self and p._pos is not None:
                    needed[p._pos] = True
        root.grad = np.ones_like(root.data)
        for i in range(root._pos, -1, -1):
            if not needed[i]:
                continue
            node = self.nodes[i]
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __enter__(self):
        global _active_tape
        self._prev = _active_tape
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = self._prev
        return False


@contextmanager
def tape():
    t = Tape()
    with t:
        yield t


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense n-dimensional real array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward",
                 "_pos", "_tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward = None
        self._pos: int | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def grad_or_zero(self) -> np.ndarray:
        """Gradient array; zeros when the leaf did not participate."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if _active_tape is None:
            if self._pos is None:
                return  # detached root: zero gradients everywhere
            raise ContractViolation("backward called outside the recording tape")
        _active_tape.backward(self)

    def accum_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy() if g.base is not None or g.flags.writeable is False else g
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def parameter(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn) -> Tensor:
    """Create a result tensor and record it if gradients are live.

    A tensor recorded on a different tape than the active one is treated
    as a constant; graphs never span tapes.
    """
    out = Tensor(data)
    if _grad_enabled and _active_tape is not None and any(
            p.requires_grad or (p._tape is _active_tape and p._pos is not None)
            for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        _active_tape.record(out)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient g down to the given (broadcast-source) shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, getattr(b, "dtype", np.float64))
    b = _as_tensor(b, a.dtype)
    out_data = a.data + b.data

    def backward(g):
        a.accum_grad(_unbroadcast(g, a.shape))
        b.accum_grad(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, getattr(b, "dtype", np.float64))
    b = _as_tensor(b, a.dtype)
    out_data = a.data - b.data

    def backward(g):
        a.accum_grad(_unbroadcast(g, a.shape))
        b.accum_grad(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, getattr(b, "dtype", np.float64))
    b = _as_tensor(b, a.dtype)
    out_data = a.data * b.data

    def backward(g):
        a.accum_grad(_unbroadcast(g * b.data, a.shape))
        b.accum_grad(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a.accum_grad(-g)

    return _make(-a.data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Stacked matrix product; leading dims broadcast numpy-style."""
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        a.accum_grad(_unbroadcast(ga, a.shape))
        b.accum_grad(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape

    def backward(g):
        a.accum_grad(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        a.accum_grad(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), backward)


def concat(parts, axis=0) -> Tensor:
    parts = list(parts)
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            p.accum_grad(g[tuple(idx)])

    return _make(out_data, tuple(parts), backward)


def slice_(a: Tensor, index) -> Tensor:
    """Basic slicing (tuple of slices/ints). Backward scatters into zeros."""
    out_data = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a.accum_grad(full)

    return _make(out_data, (a,), backward)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows along axis 0 by integer index array."""
    idx = np.asarray(idx, dtype=np.int64)
    out_data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a.accum_grad(full)

    return _make(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a.accum_grad(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.accum_grad(np.broadcast_to(g, a.shape).copy())

    return _make(out_data, (a,), backward)


def mean_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    s = sum_(a, axis=axis, keepdims=keepdims)
    return mul(s, np.asarray(1.0 / n, dtype=a.dtype))


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def backward(g):
        a.accum_grad(g * sign)

    return _make(np.abs(a.data), (a,), backward)


def sqrt_(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        a.accum_grad(g * (0.5 / out_data))

    return _make(out_data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        a.accum_grad(g * out_data)

    return _make(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ContractViolation("log requires strictly positive input")

    def backward(g):
        a.accum_grad(g / a.data)

    return _make(np.log(a.data), (a,), backward)


def reciprocal(a: Tensor) -> Tensor:
    if np.any(a.data == 0):
        raise ContractViolation("reciprocal requires nonzero input")
    out_data = 1.0 / a.data

    def backward(g):
        a.accum_grad(-g * out_data * out_data)

    return _make(out_data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a.accum_grad(g * mask)

    return _make(a.data * mask, (a,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        a.accum_grad(g * (cdf + x * pdf).astype(x.dtype))

    return _make(x * cdf, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a.accum_grad(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def softmax(a: Tensor, axis=-1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a.accum_grad(out_data * (g - dot))

    return _make(out_data, (a,), backward)


def log_softmax(a: Tensor, axis=-1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    soft = np.exp(out_data)

    def backward(g):
        a.accum_grad(g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), backward)


def layer_norm(a: Tensor, eps=1e-5) -> Tensor:
    """Normalize over the last axis to zero mean, unit variance."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out_data = xc * inv
    n = x.shape[-1]

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * out_data).mean(axis=-1, keepdims=True)
        a.accum_grad(inv * (g - gm - out_data * gxm))

    return _make(out_data, (a,), backward)


def stop_grad(a: Tensor) -> Tensor:
    """Value passthrough that blocks gradient flow."""
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# sampling / scattering


def grid_sample_bilinear(feature, points) -> Tensor:
    """Bilinear sample of an H x W x C grid at M continuous (x, y) points.

    Points are in grid coordinates: x in [0, W-1], y in [0, H-1]; points
    outside that rectangle are clamped to the border before
    interpolation. Differentiable w.r.t. both the feature grid and, when
    `points` is a Tensor, the point coordinates (zero gradient where a
    coordinate was clamped).
    """
    feat_t = feature if isinstance(feature, Tensor) else Tensor(feature)
    pts_t = points if isinstance(points, Tensor) else None
    pts = points.data if isinstance(points, Tensor) else np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ContractViolation(f"points must be M x 2, got shape {pts.shape}")
    if len(feat_t.shape) != 3:
        raise ContractViolation(
            f"feature must be H x W x C, got shape {feat_t.shape}")
    H, W, C = feat_t.shape
    if pts.shape[0] == 0:
        return _make(np.zeros((0, C), dtype=feat_t.dtype),
                     (feat_t,) if pts_t is None else (feat_t, pts_t),
                     lambda g: None)

    xr, yr = pts[:, 0], pts[:, 1]
    x = np.clip(xr, 0.0, W - 1.0)
    y = np.clip(yr, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(x), W - 2).astype(np.int64) if W > 1 else np.zeros(len(x), np.int64)
    y0 = np.minimum(np.floor(y), H - 2).astype(np.int64) if H > 1 else np.zeros(len(y), np.int64)
    x0 = np.maximum(x0, 0)
    y0 = np.maximum(y0, 0)
    # weights adopt the feature dtype so the output never upcasts
    fx = (x - x0)[:, None].astype(feat_t.dtype, copy=False)
    fy = (y - y0)[:, None].astype(feat_t.dtype, copy=False)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)

    f = feat_t.data
    f00 = f[y0, x0]
    f01 = f[y0, x1]
    f10 = f[y1, x0]
    f11 = f[y1, x1]
    out_data = ((1 - fy) * ((1 - fx) * f00 + fx * f01)
                + fy * ((1 - fx) * f10 + fx * f11))

    # Clamped coordinates contribute no gradient to the points.
    gx_mask = ((xr > 0) & (xr < W - 1)).astype(f.dtype)[:, None]
    gy_mask = ((yr > 0) & (yr < H - 1)).astype(f.dtype)[:, None]

    parents = (feat_t,) if pts_t is None else (feat_t, pts_t)

    def backward(g):
        # Accumulate corner weights in a dense (M, cells) matrix and
        # scatter with one matmul; far faster than per-element add.at
        # for the small grids this package samples from.
        m = len(x0)
        rows = np.arange(m)
        wmat = np.zeros((m, H * W), dtype=g.dtype)
        np.add.at(wmat, (rows, y0 * W + x0), ((1 - fy) * (1 - fx))[:, 0])
        np.add.at(wmat, (rows, y0 * W + x1), ((1 - fy) * fx)[:, 0])
        np.add.at(wmat, (rows, y1 * W + x0), (fy * (1 - fx))[:, 0])
        np.add.at(wmat, (rows, y1 * W + x1), (fy * fx)[:, 0])
        feat_t.accum_grad((wmat.T @ g).reshape(H, W, C).astype(f.dtype))
        if pts_t is not None:
            dfdx = (1 - fy) * (f01 - f00) + fy * (f11 - f10)
            dfdy = (1 - fx) * (f10 - f00) + fx * (f11 - f01)
            gp = np.stack([
                (g * dfdx).sum(axis=1) * gx_mask[:, 0],
                (g * dfdy).sum(axis=1) * gy_mask[:, 0],
            ], axis=1)
            pts_t.accum_grad(gp.astype(pts.dtype))

    return _make(out_data.astype(f.dtype), parents, backward)


def scatter_add(values: Tensor, index, size: int, unique: bool = False) -> Tensor:
    """Sum M x C rows into a size x C output at integer row indices.

    With ``unique`` the caller asserts the indices are duplicate-free,
    allowing a direct vectorized write instead of accumulation.
    """
    idx = np.asarray(index, dtype=np.int64)
    M, C = values.shape
    out_data = np.zeros((size, C), dtype=values.dtype)
    if unique:
        out_data[idx] = values.data
    else:
        np.add.at(out_data, idx, values.data)

    def backward(g):
        values.accum_grad(g[idx])

    return _make(out_data, (values,), backward)


# ---------------------------------------------------------------------------
# losses


def _check_nonempty(a: Tensor, name: str):
    if a.size == 0:
        raise ContractViolation(f"{name} requires non-empty inputs")


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    _check_nonempty(a, "mse")
    d = sub(a, b)
    return mean_(mul(d, d))


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    _check_nonempty(a, "l1")
    return mean_(abs_(sub(a, b)))


def kl_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean row-wise KL divergence of b from a: mean_rows sum b*log(b/a).

    Rows of both inputs must be probability distributions.
    """
    _check_nonempty(a, "kl")
    for name, t in (("a", a), ("b", b)):
        rowsum = t.data.sum(axis=-1)
        if not np.allclose(rowsum, 1.0, atol=1e-6):
            raise ContractViolation(f"kl input {name} rows must sum to 1")
    eps = 1e-12
    ratio = log(add(b, eps)) - log(add(a, eps))
    per_row = sum_(mul(b, ratio), axis=-1)
    return mean_(per_row)


def focal_class_loss(logits: Tensor, labels, gamma=2.0, alpha=0.25) -> Tensor:
    """Focal cross-entropy of predicted logits vs integer labels.

    The last axis of ``logits`` indexes classes; ``labels`` is an integer
    array over the leading axes. alpha weights the non-background
    classes, (1 - alpha) the last class (background).
    """
    _check_nonempty(logits, "focal")
    labels = np.asarray(labels, dtype=np.int64)
    n_cls = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise ContractViolation(
            f"labels must lie in [0, {n_cls}), got range "
            f"[{labels.min()}, {labels.max()}]")
    flat_logits = reshape(logits, (-1, n_cls))
    flat_labels = labels.reshape(-1)
    n = flat_labels.shape[0]
    logp = log_softmax(flat_logits, axis=-1)
    rows = np.arange(n)
    onehot = np.zeros((n, n_cls), dtype=logits.dtype)
    onehot[rows, flat_labels] = 1.0
    logp_t = sum_(mul(logp, onehot), axis=-1)
    p_t = exp(logp_t)
    alpha_t = np.where(flat_labels == n_cls - 1, 1.0 - alpha, alpha).astype(logits.dtype)
    one_minus = sub(Tensor(np.ones(n, dtype=logits.dtype)), p_t)
    weight = mul(Tensor(alpha_t), _pow_const(one_minus, gamma))
    return neg(mean_(mul(weight, logp_t)))


def _pow_const(a: Tensor, k: float) -> Tensor:
    base = np.maximum(a.data, 0.0)
    out_data = base ** k

    def backward(g):
        a.accum_grad(g * k * base ** (k - 1.0) * (a.data > 0))

    return _make(out_data, (a,), backward)
