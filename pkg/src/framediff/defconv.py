"""Locally adaptive separable deformable convolution frame synthesis.

Each output pixel is a weighted sum over a K x K tap window whose weights
come from the outer product of two per-pixel K-vectors and whose taps sample
the source frame at fractional, learned offsets (bilinear, clamp-to-edge).
Two synthesized frames are blended with a visibility map and an additive
residual. The fast path is a single fused op; a quadruple-loop reference
implementation serves as its oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class FrameKernels:
    """Separable kernel factors and per-tap offsets for one source frame.

    kernel_v, kernel_h: [..., H, W, K] nonnegative factors; the full kernel is
    their outer product over taps. offset_y, offset_x: [..., H, W, K, K].
    """

    kernel_v: Tensor
    kernel_h: Tensor
    offset_y: Tensor
    offset_x: Tensor


@dataclass
class DeformableKernelSet:
    """Kernels for the two source frames plus shared blend maps.

    visibility in [0,1] weights frame 0 against frame 1 per pixel; residual is
    an unconstrained per-pixel additive correction. Both broadcast over
    channels.
    """

    frame0: FrameKernels
    frame1: FrameKernels
    visibility: Tensor
    residual: Tensor


def _sample_neighbors(imgf, idx_flat):
    # imgf: (N, H*W, C); idx_flat: (N, M) -> (N, M, C)
    return np.take_along_axis(imgf, idx_flat[:, :, None], axis=1)


def synthesize_one(img, kernels):
    """Apply one frame's deformable kernel field: [.., C, H, W] -> same shape.

    Tap (i, j) has base displacement (i - (K-1)/2, j - (K-1)/2) before its
    learned offset, so zero offsets give a centered window. Out-of-frame
    samples clamp to the nearest edge pixel.
    """
    kv, kh = kernels.kernel_v, kernels.kernel_h
    oy, ox = kernels.offset_y, kernels.offset_x
    squeeze = img.ndim == 3
    imd = img.data[None] if squeeze else img.data
    kvd = kv.data[None] if kv.ndim == 3 else kv.data
    khd = kh.data[None] if kh.ndim == 3 else kh.data
    oyd = oy.data[None] if oy.ndim == 4 else oy.data
    oxd = ox.data[None] if ox.ndim == 4 else ox.data

    n, c, h, w = imd.shape
    k = kvd.shape[-1]
    if kvd.shape != (n, h, w, k) or khd.shape != (n, h, w, k):
        raise T.ShapeError(f"kernel factors {kvd.shape}/{khd.shape} do not match image {imd.shape}")
    if oyd.shape != (n, h, w, k, k) or oxd.shape != (n, h, w, k, k):
        raise T.ShapeError(f"offsets {oyd.shape}/{oxd.shape} do not match K={k}")

    base = np.arange(k, dtype=imd.dtype) - (k - 1) / 2.0
    ys = np.arange(h, dtype=imd.dtype)[None, :, None, None, None] + base[None, None, None, :, None] + oyd
    xs = np.arange(w, dtype=imd.dtype)[None, None, :, None, None] + base[None, None, None, None, :] + oxd
    in_y = (ys >= 0) & (ys <= h - 1)
    in_x = (xs >= 0) & (xs <= w - 1)
    yc = np.clip(ys, 0, h - 1)
    xc = np.clip(xs, 0, w - 1)
    y0 = np.floor(yc).astype(np.int64)
    x0 = np.floor(xc).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (yc - y0).astype(imd.dtype)[..., None]
    fx = (xc - x0).astype(imd.dtype)[..., None]

    imgf = np.ascontiguousarray(imd.transpose(0, 2, 3, 1)).reshape(n, h * w, c)
    m = h * w * k * k
    g00 = _sample_neighbors(imgf, (y0 * w + x0).reshape(n, m)).reshape(n, h, w, k, k, c)
    g01 = _sample_neighbors(imgf, (y0 * w + x1).reshape(n, m)).reshape(n, h, w, k, k, c)
    g10 = _sample_neighbors(imgf, (y1 * w + x0).reshape(n, m)).reshape(n, h, w, k, k, c)
    g11 = _sample_neighbors(imgf, (y1 * w + x1).reshape(n, m)).reshape(n, h, w, k, k, c)
    top = g00 * (1 - fx) + g01 * fx
    bot = g10 * (1 - fx) + g11 * fx
    patches = top * (1 - fy) + bot * fy

    out_data = np.einsum("nhwi,nhwj,nhwijc->nchw", kvd, khd, patches, optimize=True)
    out_data = np.ascontiguousarray(out_data, dtype=imd.dtype)

    def backward(g):
        gb = g[None] if squeeze else g
        if kv.requires_grad:
            dkv = np.einsum("nchw,nhwj,nhwijc->nhwi", gb, khd, patches, optimize=True)
            T._accum(kv, dkv[0] if kv.ndim == 3 else dkv)
        if kh.requires_grad:
            dkh = np.einsum("nchw,nhwi,nhwijc->nhwj", gb, kvd, patches, optimize=True)
            T._accum(kh, dkh[0] if kh.ndim == 3 else dkh)
        needs_img = img.requires_grad
        needs_off = oy.requires_grad or ox.requires_grad
        if not (needs_img or needs_off):
            return
        dpatch = np.einsum("nchw,nhwi,nhwj->nhwijc", gb, kvd, khd, optimize=True)
        if needs_off:
            dy = (dpatch * (bot - top)).sum(-1) * in_y
            dxs = (dpatch * ((g01 - g00) * (1 - fy) + (g11 - g10) * fy)).sum(-1) * in_x
            if oy.requires_grad:
                T._accum(oy, dy[0] if oy.ndim == 4 else dy)
            if ox.requires_grad:
                T._accum(ox, dxs[0] if ox.ndim == 4 else dxs)
        if needs_img:
            w00 = (1 - fy) * (1 - fx)
            w01 = (1 - fy) * fx
            w10 = fy * (1 - fx)
            w11 = fy * fx
            dimg = np.zeros(n * h * w * c, dtype=imd.dtype)
            coffs = np.arange(c, dtype=np.int64)
            batch_off = (np.arange(n, dtype=np.int64) * h * w).reshape(n, 1, 1, 1, 1)
            for yy, xx, ww in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
                flat = ((batch_off + yy * w + xx)[..., None] * c + coffs).reshape(-1)
                vals = (dpatch * ww).reshape(-1)
                dimg += np.bincount(flat, weights=vals, minlength=dimg.size).astype(imd.dtype)
            dimg = dimg.reshape(n, h, w, c).transpose(0, 3, 1, 2)
            T._accum(img, dimg[0] if squeeze else dimg)

    out = out_data[0] if squeeze else out_data
    return Tensor._from_op(out, (img, kv, kh, oy, ox), backward, "defconv")


def synthesize_one_bruteforce(img, kernels):
    """Reference implementation: explicit loops over pixels and taps."""
    imd = np.asarray(img.data if isinstance(img, Tensor) else img, dtype=np.float64)
    kv = np.asarray(kernels.kernel_v.data, dtype=np.float64)
    kh = np.asarray(kernels.kernel_h.data, dtype=np.float64)
    oy = np.asarray(kernels.offset_y.data, dtype=np.float64)
    ox = np.asarray(kernels.offset_x.data, dtype=np.float64)
    c, h, w = imd.shape
    k = kv.shape[-1]
    half = (k - 1) / 2.0
    out = np.zeros_like(imd)
    for hh in range(h):
        for ww in range(w):
            for i in range(k):
                for j in range(k):
                    y = np.clip(hh + i - half + oy[hh, ww, i, j], 0, h - 1)
                    x = np.clip(ww + j - half + ox[hh, ww, i, j], 0, w - 1)
                    y0, x0 = int(np.floor(y)), int(np.floor(x))
                    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
                    fy, fx = y - y0, x - x0
                    p = (imd[:, y0, x0] * (1 - fy) * (1 - fx)
                         + imd[:, y0, x1] * (1 - fy) * fx
                         + imd[:, y1, x0] * fy * (1 - fx)
                         + imd[:, y1, x1] * fy * fx)
                    out[:, hh, ww] += kv[hh, ww, i] * kh[hh, ww, j] * p
    return out


def blend(in0, in1, visibility, residual):
    """Per-pixel convex blend of two frames plus a residual correction."""
    if in0.shape != in1.shape:
        raise T.ShapeError(f"frames {in0.shape} vs {in1.shape} differ")
    spatial = in0.shape[-2:]
    if visibility.shape[-2:] != spatial or residual.shape[-2:] != spatial:
        raise T.ShapeError("blend maps must match the frame spatial dims")
    v = _broadcast_map(visibility, in0)
    d = _broadcast_map(residual, in0)
    return T.mul(v, in0) + T.mul(1.0 - v, in1) + d


def _broadcast_map(m, like):
    # [H,W] or [N,H,W] -> channel-broadcastable against [.., C, H, W]
    if m.ndim == like.ndim - 1 and like.ndim == 4:
        return T.reshape(m, m.shape[0], 1, *m.shape[1:])
    return m


def synthesize_frame(i0, i1, ks):
    """Full synthesis: per-frame deformable convolution, then blend."""
    n0 = synthesize_one(i0, ks.frame0)
    n1 = synthesize_one(i1, ks.frame1)
    return blend(n0, n1, ks.visibility, ks.residual)


def identity_kernels(h, w, k, dtype=np.float32, batch=None):
    """Kernel set that reproduces its inputs exactly (center tap, no offsets)."""
    if k % 2 != 1:
        raise ValueError("identity kernels need odd K")
    lead = () if batch is None else (batch,)
    factor = np.zeros(lead + (h, w, k), dtype=dtype)
    factor[..., (k - 1) // 2] = 1.0
    off = np.zeros(lead + (h, w, k, k), dtype=dtype)

    def frame():
        return FrameKernels(Tensor(factor.copy()), Tensor(factor.copy()),
                            Tensor(off.copy()), Tensor(off.copy()))

    return DeformableKernelSet(
        frame0=frame(),
        frame1=frame(),
        visibility=Tensor(np.full(lead + (h, w), 0.5, dtype=dtype)),
        residual=Tensor(np.zeros(lead + (h, w), dtype=dtype)),
    )
