"""Dense float64 tensors with reverse-mode automatic differentiation.

Plain ``numpy.ndarray`` (float64) plays the role of an immutable tensor.  A
:class:`Var` wraps one array and remembers the operation that produced it, so
calling :func:`backward` on a scalar walks the recorded graph in reverse
topological order.  The graph lives only as long as the Vars reference each
other; building a fresh forward pass per iteration is the reset.

Gradients are accumulated into the ``grad`` field of leaf Vars that were
created with ``requires_grad=True``.  Calling :func:`backward` twice without
zeroing accumulates (the sum of both passes); ``nn.sgd_step`` zeroes after
every update.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64

# Sigmoid outputs are clipped into the open unit interval so that the
# "strictly inside (0, 1)" contract survives float64 saturation.
_SIG_LO = np.finfo(DTYPE).tiny
_SIG_HI = 1.0 - np.finfo(DTYPE).epsneg


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(value, dtype=DTYPE)
        if arr.base is not None or not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr).copy()
        arr.flags.writeable = False
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Var, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        self.grad = None

    def gradient(self) -> np.ndarray:
        """``grad``, or zeros when no backward pass has reached this node."""
        return np.zeros_like(self.value) if self.grad is None else self.grad

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Var(shape={self.shape}{label}, requires_grad={self.requires_grad})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def constant(x) -> Var:
    return Var(x, requires_grad=False)


def _make(value: np.ndarray, parents: Sequence[Var], backward_fn) -> Var:
    out = Var(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _toposort(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Var) -> None:
    """Populate ``grad`` of every reachable leaf with d(loss)/d(leaf).

    Leaf gradients accumulate across calls until zeroed.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise RuntimeError(
                    f"gradient shape {pg.shape} does not match value shape {parent.shape}"
                )
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        ),
    )


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value / b.value
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * out / b.value, b.shape),
        ),
    )


def neg(x: Var) -> Var:
    return _make(-x.value, (x,), lambda g: (-g,))


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _SIG_LO, _SIG_HI)


def sigmoid(x: Var) -> Var:
    s = _sigmoid_np(x.value)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def relu(x: Var) -> Var:
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def absolute(x: Var) -> Var:
    sign = np.sign(x.value)
    return _make(np.abs(x.value), (x,), lambda g: (g * sign,))


def softplus(x: Var) -> Var:
    """log(1 + exp(x)), evaluated without overflow."""
    z = x.value
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return _make(out, (x,), lambda g: (g * _sigmoid_np(z),))


# -- reductions --------------------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(out))


def sum(x: Var, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    out = x.value.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), bwd)


def mean(x: Var, axis=None, keepdims: bool = False) -> Var:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axes, keepdims), 1.0 / n)


def amax(x: Var, axis, keepdims: bool = False) -> Var:
    """Max over ``axis``; on ties the gradient goes to the first maximum."""
    axes = _norm_axes(axis, x.ndim)
    rest = tuple(a for a in range(x.ndim) if a not in axes)
    moved = np.transpose(x.value, rest + axes)
    flat = moved.reshape(moved.shape[: len(rest)] + (-1,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    keep_shape = tuple(1 if a in axes else n for a, n in enumerate(x.shape))
    if keepdims:
        out = out.reshape(keep_shape)

    def bwd(g):
        g = g.reshape(idx.shape)
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gmoved = gflat.reshape(moved.shape)
        return (np.transpose(gmoved, np.argsort(rest + axes)),)

    return _make(out, (x,), bwd)


def global_avg_pool(x: Var) -> Var:
    return mean(x, axis=(2, 3), keepdims=True)


def global_max_pool(x: Var) -> Var:
    return amax(x, axis=(2, 3), keepdims=True)


# -- structural --------------------------------------------------------------


def concat(xs: Sequence[Var], axis: int = 1) -> Var:
    xs = [as_var(x) for x in xs]
    if not xs:
        raise ValueError("concat of an empty list")
    ndim = xs[0].ndim
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for {ndim}-d tensors")
    axis %= ndim
    sizes = [x.shape[axis] for x in xs]
    out = np.concatenate([x.value for x in xs], axis=axis)
    bounds = np.cumsum(sizes)[:-1]
    return _make(out, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def reshape(x: Var, shape) -> Var:
    return _make(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def subsample(x: Var, step: int = 2) -> Var:
    """Keep every ``step``-th row and column starting at index 0."""
    out = x.value[..., ::step, ::step]

    def bwd(g):
        gx = np.zeros(x.shape)
        gx[..., ::step, ::step] = g
        return (gx,)

    return _make(out, (x,), bwd)


def spatial_linear(x: Var, rows: np.ndarray, cols: np.ndarray) -> Var:
    """``rows @ x @ cols.T`` over the last two axes.

    Padding, interpolation and decimation are all separable linear maps of
    this form, so they share one exact gradient.
    """
    rows = np.asarray(rows, dtype=DTYPE)
    cols = np.asarray(cols, dtype=DTYPE)
    if rows.shape[1] != x.shape[-2] or cols.shape[1] != x.shape[-1]:
        raise ValueError(
            f"spatial map expects extents {(rows.shape[1], cols.shape[1])}, "
            f"got {x.shape[-2:]}"
        )
    out = rows @ x.value @ cols.T
    return _make(out, (x,), lambda g: (rows.T @ g @ cols,))


# -- padding and interpolation matrices --------------------------------------

PADDING_MODES = ("zero", "reflect")


def pad_matrix(n: int, pad: int, mode: str) -> np.ndarray:
    """(n + 2*pad, n) map implementing one-axis padding.

    ``reflect`` mirrors about the outer pixel edge (d c b a | a b c d), which
    keeps the column sums of a normalized blur equal to one.
    """
    if mode not in PADDING_MODES:
        raise ValueError(f"unknown padding mode {mode!r}; expected one of {PADDING_MODES}")
    m = np.zeros((n + 2 * pad, n))
    for r in range(n + 2 * pad):
        src = r - pad
        if mode == "zero":
            if 0 <= src < n:
                m[r, src] = 1.0
            continue
        if pad > n:
            raise ValueError(f"reflect padding {pad} needs at least {pad} samples, got {n}")
        period = 2 * n
        src %= period
        if src >= n:
            src = period - 1 - src
        m[r, src] = 1.0
    return m


def anchored_upsample_matrix(n_in: int, n_out: int, factor: int) -> np.ndarray:
    """Linear interpolation with output sample ``y`` at source ``y / factor``.

    Source sample ``i`` sits exactly on output sample ``factor * i``, the
    inverse geometry of keeping every ``factor``-th sample.  Positions past the
    last source sample are held constant.
    """
    m = np.zeros((n_out, n_in))
    for y in range(n_out):
        src = y / factor
        i0 = int(np.floor(src))
        if i0 >= n_in - 1:
            m[y, n_in - 1] = 1.0
            continue
        t = src - i0
        m[y, i0] += 1.0 - t
        m[y, i0 + 1] += t
    return m


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-centre bilinear resampling (area mean for exact 2x shrink)."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for y in range(n_out):
        src = min(max((y + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        m[y, i0] += 1.0 - t
        m[y, i1] += t
    return m


def pad2d(x: Var, pad: int, mode: str = "zero") -> Var:
    if pad == 0:
        return x
    h, w = x.shape[-2:]
    return spatial_linear(x, pad_matrix(h, pad, mode), pad_matrix(w, pad, mode))


def upsample_bilinear(x: Var, factor: int) -> Var:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    h, w = x.shape[-2:]
    return spatial_linear(
        x,
        anchored_upsample_matrix(h, h * factor, factor),
        anchored_upsample_matrix(w, w * factor, factor),
    )


def resize_bilinear(x: Var, out_hw: tuple[int, int]) -> Var:
    h, w = x.shape[-2:]
    return spatial_linear(x, resize_matrix(h, out_hw[0]), resize_matrix(w, out_hw[1]))


# -- convolution and pooling -------------------------------------------------


def conv_output_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(
    x: Var,
    weight: Var,
    bias: Var | None = None,
    stride: int = 1,
    padding: int | None = None,
    pad_mode: str = "zero",
) -> Var:
    """2-D cross-correlation over NCHW input.

    ``padding`` defaults to ``k // 2`` ("same" extents at stride 1).
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be 4-d (B,C,H,W), got shape {x.shape}")
    if weight.ndim != 4:
        raise ValueError(f"conv2d weight must be 4-d (Cout,Cin,kh,kw), got shape {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if x.shape[1] != cin:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, weight expects Cin={cin}"
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d bias must have shape ({cout},), got {bias.shape}")
    if padding is None:
        padding = kh // 2
    xp = pad2d(x, padding, pad_mode)
    b, _, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d input {x.shape[-2:]} too small for kernel {kh}x{kw}")
    xv, wv = xp.value, weight.value
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1

    out = np.zeros((b, cout, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patch = xv[:, :, i : i + span_h : stride, j : j + span_w : stride]
            out += np.einsum("bchw,oc->bohw", patch, wv[:, :, i, j], optimize=True)
    if bias is not None:
        out += bias.value[None, :, None, None]

    def bwd(g):
        gx = np.zeros_like(xv)
        gw = np.empty_like(wv)
        for i in range(kh):
            for j in range(kw):
                patch = xv[:, :, i : i + span_h : stride, j : j + span_w : stride]
                gw[:, :, i, j] = np.einsum("bohw,bchw->oc", g, patch, optimize=True)
                gx[:, :, i : i + span_h : stride, j : j + span_w : stride] += np.einsum(
                    "bohw,oc->bchw", g, wv[:, :, i, j], optimize=True
                )
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (xp, weight) if bias is None else (xp, weight, bias)
    return _make(out, parents, bwd)


def max_pool2d(x: Var, k: int = 2, stride: int | None = None) -> Var:
    """Max pooling without padding; ties route the gradient to the first max."""
    stride = k if stride is None else stride
    if k < 1 or stride < 1:
        raise ValueError(f"max_pool2d needs k, stride >= 1, got k={k}, stride={stride}")
    b, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"max_pool2d input {x.shape[-2:]} smaller than window {k}")
    xv = x.value
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1
    best = np.full((b, c, ho, wo), -np.inf)
    arg = np.zeros((b, c, ho, wo), dtype=np.int64)
    for i in range(k):
        for j in range(k):
            patch = xv[:, :, i : i + span_h : stride, j : j + span_w : stride]
            better = patch > best
            best = np.where(better, patch, best)
            arg = np.where(better, i * k + j, arg)

    def bwd(g):
        gx = np.zeros_like(xv)
        for i in range(k):
            for j in range(k):
                gx[:, :, i : i + span_h : stride, j : j + span_w : stride] += np.where(
                    arg == i * k + j, g, 0.0
                )
        return (gx,)

    return _make(best, (x,), bwd)


def binary_cross_entropy_with_logits(logit: Var, target: np.ndarray) -> Var:
    """Mean of max(z,0) - z*y + log(1 + exp(-|z|)) over all elements."""
    z = logit.value
    y = np.asarray(target, dtype=DTYPE)
    if y.shape != z.shape:
        raise ValueError(f"target shape {y.shape} does not match logit shape {z.shape}")
    n = z.size
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return _make(
        np.asarray(per.sum() / n),
        (logit,),
        lambda g: (g * (_sigmoid_np(z) - y) / n,),
    )
