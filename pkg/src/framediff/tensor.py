"""Dense N-d tensors with reverse-mode autodiff over a fixed set of ops.

Data lives in contiguous numpy arrays (float32 by default, float64 for
gradient-check work). Every op validates its output for NaN/Inf and fails
loudly instead of letting a diverged value propagate. Broadcasting follows
numpy's trailing-dimension rules; gradients are summed back to the original
shapes.
"""

from __future__ import annotations

import math
import threading

import numpy as np


class NumericsError(ArithmeticError):
    """An op produced NaN or Inf from finite inputs."""


class ShapeError(ValueError):
    """Operand dimensions are incompatible with the op."""


_NAN_CHECKS = True


def set_nan_checks(enabled):
    """Globally enable/disable post-op finiteness checks (on by default)."""
    global _NAN_CHECKS
    _NAN_CHECKS = bool(enabled)


def _check_finite(arr, op):
    # min/max both collapse to nan/inf on any bad value; avoids a bool buffer
    if _NAN_CHECKS and arr.size and not (
        np.isfinite(arr.min()) and np.isfinite(arr.max())
    ):
        raise NumericsError(f"non-finite result from op '{op}'")


def _as_array(data, dtype=None):
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data
    return np.asarray(data, dtype=np.float32)


class Tensor:
    """A dense array plus an optional gradient buffer and graph linkage.

    Tensors are immutable after creation except through ``grad``; reusing a
    tensor in several ops accumulates both contributions on backward.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, op={self._op})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """A view of the same data cut out of the graph."""
        return Tensor(self.data, requires_grad=False)

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _from_op(data, parents, backward, op):
        """Wrap an op result; record the graph only if a parent is tracked."""
        _check_finite(data, op)
        requires = any(p.requires_grad for p in parents)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = requires
        out._parents = tuple(parents) if requires else ()
        out._backward = backward if requires else None
        out._op = op
        return out

    def backward(self):
        """Accumulate gradients of this scalar into every tracked tensor.

        Each call contributes one full pass; gradients add up across calls
        until zeroed.
        """
        if self.data.size != 1:
            raise ShapeError("backward requires a scalar loss")
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tracked tensor")
        order = []
        seen = set()
        stack = [(self, False)]
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
        outer = getattr(_PASS, "grads", None)
        _PASS.grads = {id(self): np.ones_like(self.data)}
        try:
            for node in reversed(order):
                g = _PASS.grads.pop(id(node), None)
                if g is None:
                    continue
                if node.grad is None:
                    node.grad = g
                else:
                    node.grad += g
                if node._backward is not None:
                    # closures see a read-only view; anything they pass through
                    # unchanged is then copied on accumulation, never aliased
                    gv = g[...]
                    gv.flags.writeable = False
                    node._backward(gv)
        finally:
            _PASS.grads = outer

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other, self), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


_PASS = threading.local()


def _accum(t, g):
    """Add a contribution for t within the active backward pass."""
    if not t.requires_grad:
        return
    grads = getattr(_PASS, "grads", None)
    if grads is None:
        # direct accumulation outside a pass (manual gradient injection)
        if t.grad is None:
            t.grad = np.array(g, dtype=t.data.dtype, copy=True)
        else:
            t.grad += g
        return
    key = id(t)
    if key in grads:
        grads[key] += g
    elif g.base is None and g.flags.owndata and g.dtype == t.data.dtype:
        # fresh temporary: safe to take ownership without copying
        grads[key] = g
    else:
        grads[key] = np.array(g, dtype=t.data.dtype, copy=True)


def _wrap(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast up from `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a, b, op):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a)
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"dtype mismatch in '{op}': {a.data.dtype} vs {b.data.dtype}")
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"incompatible dims in '{op}': {a.data.shape} vs {b.data.shape}")
    return a, b


# -- elementwise ops ---------------------------------------------------------


def add(a, b):
    a, b = _binary(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor._from_op(out_data, (a, b), backward, "add")


def sub(a, b):
    a, b = _binary(a, b, "sub")
    out_data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return Tensor._from_op(out_data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _binary(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor._from_op(out_data, (a, b), backward, "mul")


def div(a, b):
    a, b = _binary(a, b, "div")
    with np.errstate(all="ignore"):
        out_data = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * out_data / b.data, b.data.shape))

    return Tensor._from_op(out_data, (a, b), backward, "div")


def scale(a, s):
    s = float(s)
    out_data = a.data * s

    def backward(g):
        _accum(a, g * s)

    return Tensor._from_op(out_data, (a,), backward, "scale")


def tabs(a):
    out_data = np.abs(a.data)

    def backward(g):
        _accum(a, g * np.sign(a.data))

    return Tensor._from_op(out_data, (a,), backward, "abs")


def sqrt(a):
    with np.errstate(all="ignore"):
        out_data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * (0.5 / out_data))

    return Tensor._from_op(out_data, (a,), backward, "sqrt")


def exp(a):
    with np.errstate(all="ignore"):
        out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return Tensor._from_op(out_data, (a,), backward, "exp")


def sigmoid(a):
    # exp may overflow for very negative inputs; the quotient still lands at 0
    with np.errstate(all="ignore"):
        out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accum(a, g * (out_data * (1.0 - out_data)))

    return Tensor._from_op(out_data, (a,), backward, "sigmoid")


def silu(a):
    with np.errstate(all="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * s

    def backward(g):
        _accum(a, g * (s * (1.0 + a.data * (1.0 - s))))

    return Tensor._from_op(out_data, (a,), backward, "silu")


def relu(a):
    out_data = np.maximum(a.data, 0)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return Tensor._from_op(out_data, (a,), backward, "relu")


# -- matmul / conv -----------------------------------------------------------


def matmul(a, b):
    """Matrix product with numpy stacking semantics on leading axes."""
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"dtype mismatch in 'matmul': {a.data.dtype} vs {b.data.dtype}")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires at least 2-d operands")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} x {b.data.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return Tensor._from_op(out_data, (a, b), backward, "matmul")


_CONV_CHUNK_BYTES = 6 << 20  # keep the im2col buffer roughly cache-sized


def conv2d(x, w, stride=1, pad=0):
    """Cross-correlation of x:[N,C,H,W] with w:[O,C,kh,kw].

    Output spatial size must divide exactly: (H + 2*pad - kh) % stride == 0.
    The batch is processed in chunks whose im2col buffer stays cache-sized.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects x:[N,C,H,W] and w:[O,C,kh,kw]")
    n, c, h, wd = x.data.shape
    o, cw, kh, kw = w.data.shape
    if c != cw:
        raise ShapeError(f"conv2d channel mismatch: input {c}, weight {cw}")
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise ShapeError("conv2d kernel larger than padded input")
    if (h + 2 * pad - kh) % stride or (wd + 2 * pad - kw) % stride:
        raise ShapeError("conv2d output size is not an integer")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    ckk = c * kh * kw
    itemsize = xp.dtype.itemsize
    chunk = max(1, _CONV_CHUNK_BYTES // max(ckk * ho * wo * itemsize, 1))
    wmat = w.data.reshape(o, ckk)

    def im2col(block):
        s = block.strides
        view = np.lib.stride_tricks.as_strided(
            block,
            (block.shape[0], c, kh, kw, ho, wo),
            (s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
        )
        return np.ascontiguousarray(view.transpose(1, 2, 3, 0, 4, 5)).reshape(ckk, -1)

    out_data = np.empty((n, o, ho, wo), dtype=xp.dtype)
    for lo in range(0, n, chunk):
        cols = im2col(xp[lo : lo + chunk])
        nb = min(chunk, n - lo)
        out_data[lo : lo + nb] = (wmat @ cols).reshape(o, nb, ho, wo).transpose(1, 0, 2, 3)

    def backward(g):
        dw = np.zeros_like(w.data) if w.requires_grad else None
        dx = np.empty_like(x.data) if x.requires_grad else None
        for lo in range(0, n, chunk):
            nb = min(chunk, n - lo)
            cols = im2col(xp[lo : lo + nb])
            gmat = np.ascontiguousarray(
                g[lo : lo + nb].transpose(1, 0, 2, 3)).reshape(o, -1)
            if dw is not None:
                dw += (gmat @ cols.T).reshape(w.data.shape)
            if dx is not None:
                dcols = (wmat.T @ gmat).reshape(c, kh, kw, nb, ho, wo)
                dxp = np.zeros((nb, c, h + 2 * pad, wd + 2 * pad), dtype=x.data.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i : i + stride * ho : stride,
                            j : j + stride * wo : stride] += dcols[:, i, j].transpose(1, 0, 2, 3)
                dx[lo : lo + nb] = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
        if dw is not None:
            _accum(w, dw)
        if dx is not None:
            _accum(x, dx)

    return Tensor._from_op(out_data, (x, w), backward, "conv2d")


# -- reductions --------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    if any(x.data.shape[a] == 0 for a in axes):
        raise ShapeError("reduce over an empty axis")
    out_data = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(x, np.broadcast_to(g, x.data.shape))

    return Tensor._from_op(np.asarray(out_data, dtype=x.data.dtype), (x,), backward, "sum")


def tmean(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.data.shape[a]
    return scale(tsum(x, axis, keepdims), 1.0 / count)


def tmax(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    if any(x.data.shape[a] == 0 for a in axes):
        raise ShapeError("reduce over an empty axis")
    out_data = x.data.max(axis=axes, keepdims=True)
    mask = x.data == out_data
    counts = mask.sum(axis=axes, keepdims=True)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(x, mask * (g / counts))

    res = out_data if keepdims else out_data.squeeze(axes)
    return Tensor._from_op(np.asarray(res, dtype=x.data.dtype), (x,), backward, "max")


def softmax(x, axis=-1):
    """Numerically stable softmax along one axis (fused op)."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(x, out_data * (g - dot))

    return Tensor._from_op(out_data, (x,), backward, "softmax")


def groupnorm(x, gamma, beta, eps=1e-5):
    """Fused single-group normalization of x:[N,C,H,W] with per-channel affine.

    Statistics are taken over (C, H, W) per sample.
    """
    n = x.data.shape[0]
    axes = (1, 2, 3)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = np.mean(np.square(xc), axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out_data = y * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            _accum(gamma, (g * y).sum(axis=(0, 2, 3), keepdims=True))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3), keepdims=True))
        if x.requires_grad:
            dy = g * gamma.data
            m1 = dy.mean(axis=axes, keepdims=True)
            m2 = (dy * y).mean(axis=axes, keepdims=True)
            _accum(x, inv * (dy - m1 - y * m2))

    return Tensor._from_op(out_data, (x, gamma, beta), backward, "groupnorm")


# -- shape plumbing ----------------------------------------------------------


def reshape(x, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = x.data.shape
    out_data = x.data.reshape(shape)

    def backward(g):
        _accum(x, g.reshape(old))

    return Tensor._from_op(out_data, (x,), backward, "reshape")


def transpose(x, *axes):
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    out_data = np.ascontiguousarray(x.data.transpose(axes))

    def backward(g):
        _accum(x, g.transpose(tuple(inv)))

    return Tensor._from_op(out_data, (x,), backward, "transpose")


def concat(tensors, axis=0):
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return Tensor._from_op(out_data, tuple(tensors), backward, "concat")


def pad2d(x, top, bottom, left, right):
    """Zero-pad the two trailing spatial axes of x:[...,H,W]."""
    widths = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    out_data = np.pad(x.data, widths)
    h, w = x.data.shape[-2:]

    def backward(g):
        idx = (Ellipsis, slice(top, top + h), slice(left, left + w))
        _accum(x, g[idx])

    return Tensor._from_op(out_data, (x,), backward, "pad2d")


def take(x, idx):
    """Basic (non-repeating) slicing; gradients scatter back into place."""
    out_data = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] += g
        _accum(x, full)

    return Tensor._from_op(np.ascontiguousarray(out_data), (x,), backward, "take")


def upsample2x(x):
    """Nearest-neighbor 2x upsampling of x:[N,C,H,W]."""
    out_data = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.data.shape

    def backward(g):
        _accum(x, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return Tensor._from_op(out_data, (x,), backward, "upsample2x")


def embed_rows(table, indices):
    """Select rows of table:[M,D] by an integer index array; grads scatter-add."""
    idx = np.asarray(indices)
    out_data = np.ascontiguousarray(table.data[idx])

    def backward(g):
        dtab = np.zeros_like(table.data)
        np.add.at(dtab, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
        _accum(table, dtab)

    return Tensor._from_op(out_data, (table,), backward, "embed_rows")


def bilinear_sample(img, y, x):
    """Sample img:[C,H,W] at one fractional position, clamped to the frame.

    Differentiable with respect to the image and, when given as scalar
    tensors, the coordinates.
    """
    yt = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=img.data.dtype))
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=img.data.dtype))
    c, h, w = img.data.shape
    yv = float(np.clip(yt.data, 0.0, h - 1))
    xv = float(np.clip(xt.data, 0.0, w - 1))
    y0, x0 = int(math.floor(yv)), int(math.floor(xv))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = yv - y0, xv - x0
    p00 = img.data[:, y0, x0]
    p01 = img.data[:, y0, x1]
    p10 = img.data[:, y1, x0]
    p11 = img.data[:, y1, x1]
    top = p00 * (1 - fx) + p01 * fx
    bot = p10 * (1 - fx) + p11 * fx
    out_data = top * (1 - fy) + bot * fy

    clamped_y = float(yt.data) != yv
    clamped_x = float(xt.data) != xv

    def backward(g):
        if img.requires_grad:
            d = np.zeros_like(img.data)
            d[:, y0, x0] += g * (1 - fy) * (1 - fx)
            d[:, y0, x1] += g * (1 - fy) * fx
            d[:, y1, x0] += g * fy * (1 - fx)
            d[:, y1, x1] += g * fy * fx
            _accum(img, d)
        if yt.requires_grad and not clamped_y:
            _accum(yt, np.asarray((g * (bot - top)).sum(), dtype=yt.data.dtype))
        if xt.requires_grad and not clamped_x:
            dx = (g * ((p01 - p00) * (1 - fy) + (p11 - p10) * fy)).sum()
            _accum(xt, np.asarray(dx, dtype=xt.data.dtype))

    return Tensor._from_op(
        np.asarray(out_data, dtype=img.data.dtype), (img, yt, xt), backward, "bilinear"
    )


# -- constructors ------------------------------------------------------------


def zeros(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def randn(shape, rng, dtype=np.float32, requires_grad=False):
    return Tensor(rng.standard_normal(shape, dtype=np.float64).astype(dtype),
                  requires_grad=requires_grad)
