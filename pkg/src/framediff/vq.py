"""Vector-quantization bottleneck with a straight-through estimator.

Each spatial latent vector snaps to its nearest codebook entry (Euclidean,
lowest index on ties). The quantized output carries the identity gradient
back to the continuous latent; the codebook itself learns only through the
quantization loss terms.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

COMMIT_WEIGHT = 0.25


class Codebook:
    """Learnable embedding table of shape [num_entries, dim]."""

    def __init__(self, num_entries, dim, rng):
        self.num_entries = num_entries
        self.dim = dim
        init = rng.uniform(-1.0, 1.0, (num_entries, dim)).astype(np.float32)
        self.entries = Tensor(init, requires_grad=True)


def nearest_entries(z_vectors, entries):
    """Index of the closest entry per row; lowest index wins ties."""
    diff = z_vectors[:, None, :] - entries[None, :, :]
    dist = np.square(diff).sum(axis=-1)
    return np.argmin(dist, axis=1)


def quantize(z, cb, commit_weight=COMMIT_WEIGHT):
    """Snap z:[.., C, H, W] to the codebook.

    Returns (z_q, indices, vq_loss): z_q equals the selected entries in the
    forward pass but routes gradients straight through to z; vq_loss moves
    the codebook toward the latents and commits the latents to the codebook.
    """
    squeeze = z.ndim == 3
    zd = z.data[None] if squeeze else z.data
    n, c, h, w = zd.shape
    if c != cb.dim:
        raise T.ShapeError(f"latent channels {c} != codebook dim {cb.dim}")
    vectors = np.ascontiguousarray(zd.transpose(0, 2, 3, 1)).reshape(-1, c)
    if cb.entries.data.dtype != zd.dtype:
        entries = cb.entries.data.astype(zd.dtype)
    else:
        entries = cb.entries.data
    # chunk the distance scan to bound the (tokens x entries) buffer
    idx = np.empty(vectors.shape[0], dtype=np.int64)
    step = max(1, 2_000_000 // max(cb.num_entries, 1))
    for lo in range(0, vectors.shape[0], step):
        idx[lo : lo + step] = nearest_entries(vectors[lo : lo + step], entries)
    indices = idx.reshape(n, h, w)

    picked = T.embed_rows(cb.entries, indices)        # (n, h, w, c)
    zq_raw = T.transpose(picked, 0, 3, 1, 2)
    if zq_raw.data.dtype != zd.dtype:
        zq_raw = Tensor._from_op(zq_raw.data.astype(zd.dtype), (zq_raw,),
                                 lambda g: T._accum(zq_raw, g.astype(zq_raw.data.dtype)), "cast")

    zb = T.reshape(z, *zd.shape) if squeeze else z
    codebook_term = zq_raw - zb.detach()
    commit_term = zb - zq_raw.detach()
    vq_loss = T.tmean(T.mul(codebook_term, codebook_term)) \
        + T.scale(T.tmean(T.mul(commit_term, commit_term)), commit_weight)

    # straight-through: forward value of the entries, identity gradient to z
    z_q = zb + (zq_raw - zb).detach()
    if squeeze:
        z_q = T.reshape(z_q, c, h, w)
        indices = indices[0]
    return z_q, indices, vq_loss


def codebook_usage(indices, num_entries):
    """Histogram of entry usage over any batch of index arrays."""
    if isinstance(indices, np.ndarray):
        indices = [indices]
    flat = np.concatenate([np.asarray(ix).reshape(-1) for ix in indices]) \
        if indices else np.empty(0, dtype=np.int64)
    return np.bincount(flat.astype(np.int64), minlength=num_entries)
