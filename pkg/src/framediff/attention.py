"""Multi-axis attention: windowed local, strided-grid global, and the
cross-attention variant that fuses decoder features with the two neighbor
feature pyramids.

Window partition groups each P x P patch of the feature map; grid partition
groups tokens a fixed stride apart, so one group spans the whole image.
Either partition with a single group is exactly full self-attention, which
the tests exploit as an oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import tensor as T
from .nn import Conv2d, GroupNorm, Linear, Module


@dataclass(frozen=True)
class AttentionConfig:
    window_size: int = 4
    head_count: int = 4

    def __post_init__(self):
        if self.window_size < 1 or self.head_count < 1:
            raise ValueError("window_size and head_count must be positive")


def _swap_last(x):
    axes = list(range(x.ndim))
    axes[-2], axes[-1] = axes[-1], axes[-2]
    return T.transpose(x, *axes)


def scaled_dot_attention(q, k, v):
    """softmax(q kT / sqrt(d)) v on the trailing two axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise T.ShapeError(f"attention dims disagree: q{q.shape} k{k.shape} v{v.shape}")
    logits = T.scale(T.matmul(q, _swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    return T.matmul(T.softmax(logits, axis=-1), v)


def partition_tokens(x, size, mode):
    """Split x:[N,C,H,W] into attention groups of tokens [B, n, C].

    'window': contiguous size x size patches. 'grid': tokens strided so each
    group has one member per grid cell. The effective group edge is capped at
    the image edge; non-multiple sizes are zero-padded and later cropped.
    """
    n, c, h, w = x.shape
    p = min(size, h, w)
    ph = (p - h % p) % p
    pw = (p - w % p) % p
    xp = T.pad2d(x, 0, ph, 0, pw) if (ph or pw) else x
    hp, wp = h + ph, w + pw
    if mode == "window":
        t = T.reshape(xp, n, c, hp // p, p, wp // p, p)
        t = T.transpose(t, 0, 2, 4, 3, 5, 1)
        groups = (hp // p) * (wp // p)
    elif mode == "grid":
        t = T.reshape(xp, n, c, p, hp // p, p, wp // p)
        t = T.transpose(t, 0, 3, 5, 2, 4, 1)
        groups = (hp // p) * (wp // p)
    else:
        raise ValueError(f"unknown partition mode '{mode}'")
    tokens = T.reshape(t, n * groups, p * p, c)
    return tokens, (n, c, h, w, hp, wp, p, mode)


def unpartition_tokens(tokens, meta):
    n, c, h, w, hp, wp, p, mode = meta
    if mode == "window":
        t = T.reshape(tokens, n, hp // p, wp // p, p, p, c)
        t = T.transpose(t, 0, 5, 1, 3, 2, 4)
    else:
        t = T.reshape(tokens, n, hp // p, wp // p, p, p, c)
        t = T.transpose(t, 0, 5, 3, 1, 4, 2)
    x = T.reshape(t, n, c, hp, wp)
    if hp != h or wp != w:
        x = x[:, :, :h, :w]
    return x


class MultiheadAttention(Module):
    def __init__(self, ch, heads, rng):
        super().__init__()
        if ch % heads:
            raise T.ShapeError(f"channels {ch} not divisible by {heads} heads")
        self.heads = heads
        self.proj_q = Linear(ch, ch, rng)
        self.proj_k = Linear(ch, ch, rng)
        self.proj_v = Linear(ch, ch, rng)
        self.proj_out = Linear(ch, ch, rng)

    def forward(self, tokens_q, tokens_kv):
        b, nq, c = tokens_q.shape
        nk = tokens_kv.shape[1]
        h = self.heads
        dh = c // h

        def split(t, n):
            return T.transpose(T.reshape(t, b, n, h, dh), 0, 2, 1, 3)

        q = split(self.proj_q(tokens_q), nq)
        k = split(self.proj_k(tokens_kv), nk)
        v = split(self.proj_v(tokens_kv), nk)
        att = scaled_dot_attention(q, k, v)
        merged = T.reshape(T.transpose(att, 0, 2, 1, 3), b, nq, c)
        return self.proj_out(merged)

    __call__ = forward


class AxialSelfAttention(Module):
    """Pre-normed self-attention over one partition axis, with residual."""

    def __init__(self, ch, cfg, mode, rng):
        super().__init__()
        self.mode = mode
        self.size = cfg.window_size
        self.norm = GroupNorm(ch)
        self.attn = MultiheadAttention(ch, cfg.head_count, rng)

    def forward(self, x):
        tokens, meta = partition_tokens(self.norm(x), self.size, self.mode)
        y = self.attn(tokens, tokens)
        return x + unpartition_tokens(y, meta)

    __call__ = forward


class AxialCrossAttention(Module):
    """Queries from decoded features, keys/values from both neighbor maps.

    The two context maps share one key/value projection, so their token sets
    are interchangeable.
    """

    def __init__(self, ch, cfg, mode, rng):
        super().__init__()
        self.mode = mode
        self.size = cfg.window_size
        self.norm_q = GroupNorm(ch)
        self.norm_kv = GroupNorm(ch)
        self.attn = MultiheadAttention(ch, cfg.head_count, rng)

    def forward(self, dec, ctx0, ctx1):
        if dec.shape != ctx0.shape or dec.shape != ctx1.shape:
            raise T.ShapeError(
                f"cross-attention inputs disagree: {dec.shape} vs {ctx0.shape}/{ctx1.shape}")
        q, meta = partition_tokens(self.norm_q(dec), self.size, self.mode)
        k0, _ = partition_tokens(self.norm_kv(ctx0), self.size, self.mode)
        k1, _ = partition_tokens(self.norm_kv(ctx1), self.size, self.mode)
        kv = T.concat([k0, k1], axis=1)
        y = self.attn(q, kv)
        return dec + unpartition_tokens(y, meta)

    __call__ = forward


class ConvResidual(Module):
    def __init__(self, ch, rng):
        super().__init__()
        self.norm = GroupNorm(ch)
        self.conv = Conv2d(ch, ch, 3, rng)

    def forward(self, x):
        return x + self.conv(T.silu(self.norm(x)))

    __call__ = forward


class TokenMLP(Module):
    def __init__(self, ch, rng, ratio=2):
        super().__init__()
        self.norm = GroupNorm(ch)
        self.fc1 = Conv2d(ch, ch * ratio, 1, rng)
        self.fc2 = Conv2d(ch * ratio, ch, 1, rng)

    def forward(self, x):
        return x + self.fc2(T.silu(self.fc1(self.norm(x))))

    __call__ = forward


class MaxVitBlock(Module):
    """conv residual -> window attention -> grid attention -> pointwise MLP."""

    def __init__(self, ch, cfg, rng):
        super().__init__()
        self.conv = ConvResidual(ch, rng)
        self.window = AxialSelfAttention(ch, cfg, "window", rng)
        self.grid = AxialSelfAttention(ch, cfg, "grid", rng)
        self.mlp = TokenMLP(ch, rng)

    def forward(self, x):
        return self.mlp(self.grid(self.window(self.conv(x))))

    __call__ = forward


class MaxCrossBlock(Module):
    """Cross-attention variant: the decoder stream queries both contexts."""

    def __init__(self, ch, cfg, rng):
        super().__init__()
        self.conv = ConvResidual(ch, rng)
        self.window = AxialCrossAttention(ch, cfg, "window", rng)
        self.grid = AxialCrossAttention(ch, cfg, "grid", rng)
        self.mlp = TokenMLP(ch, rng)

    def forward(self, dec, ctx0, ctx1):
        h = self.conv(dec)
        h = self.window(h, ctx0, ctx1)
        h = self.grid(h, ctx0, ctx1)
        return self.mlp(h)

    __call__ = forward
