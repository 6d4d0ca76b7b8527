"""Time-conditioned denoising U-Net over latents.

Conditioning is channel concatenation of the noisy target latent with the
two neighbor latents. Each resolution level is a ResBlock (with the step
embedding added as a per-channel bias) optionally followed by a multi-axis
attention block; skips concatenate encoder features into the upward path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, MaxVitBlock
from .nn import Conv2d, Downsample, GroupNorm, Linear, Module, ModuleList, ResBlock, Upsample
from .tensor import Tensor


@dataclass(frozen=True)
class UNetConfig:
    base_channels: int = 32
    channel_mult: tuple = (1, 2, 4)
    attn_depths: tuple = (1, 2)
    time_embed_dim: int = 128
    window_size: int = 4
    head_count: int = 4
    latent_channels: int = 3

    def __post_init__(self):
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        if any(d < 0 or d >= len(self.channel_mult) for d in self.attn_depths):
            raise ValueError("attn_depths outside the level range")

    @property
    def widths(self):
        return [self.base_channels * m for m in self.channel_mult]

    @property
    def attention(self):
        return AttentionConfig(self.window_size, self.head_count)


def sinusoidal_embedding(t, dim):
    """Raw sin/cos step features: element k uses frequency 10000^(-k/(dim/2))."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    ang = np.asarray(t, dtype=np.float64)[..., None] * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    return emb.astype(np.float32)


class DenoisingUNet(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        widths = cfg.widths
        levels = len(widths)
        td = cfg.time_embed_dim
        self.temb_fc1 = Linear(td, td, rng)
        self.temb_fc2 = Linear(td, td, rng)
        self.stem = Conv2d(3 * cfg.latent_channels, widths[0], 3, rng)

        down_blocks, down_attns, downs = [], [], []
        ch = widths[0]
        for i in range(levels):
            down_blocks.append(ResBlock(ch, widths[i], rng, temb_dim=td))
            down_attns.append(MaxVitBlock(widths[i], cfg.attention, rng)
                              if i in cfg.attn_depths else None)
            if i < levels - 1:
                downs.append(Downsample(widths[i], widths[i], rng))
            ch = widths[i]
        self.down_blocks = ModuleList(down_blocks)
        self.down_attns = ModuleList([m for m in down_attns if m is not None])
        self._down_attn_map = [m is not None for m in down_attns]
        self.downs = ModuleList(downs)

        self.mid1 = ResBlock(widths[-1], widths[-1], rng, temb_dim=td)
        self.mid_attn = MaxVitBlock(widths[-1], cfg.attention, rng)
        self.mid2 = ResBlock(widths[-1], widths[-1], rng, temb_dim=td)

        up_blocks, up_attns, ups = [], [], []
        for i in range(levels - 1, -1, -1):
            up_blocks.append(ResBlock(2 * widths[i], widths[i], rng, temb_dim=td))
            up_attns.append(MaxVitBlock(widths[i], cfg.attention, rng)
                            if i in cfg.attn_depths else None)
            if i > 0:
                ups.append(Upsample(widths[i], widths[i - 1], rng))
        self.up_blocks = ModuleList(up_blocks)
        self.up_attns = ModuleList([m for m in up_attns if m is not None])
        self._up_attn_map = [m is not None for m in up_attns]
        self.ups = ModuleList(ups)

        self.norm_out = GroupNorm(widths[0])
        self.conv_out = Conv2d(widths[0], cfg.latent_channels, 3, rng)

    def _temb(self, t, batch):
        raw = sinusoidal_embedding(t, self.cfg.time_embed_dim)
        if raw.ndim == 1:
            raw = np.tile(raw, (batch, 1))
        raw = raw.astype(self.temb_fc1.w.data.dtype)
        return self.temb_fc2(T.silu(self.temb_fc1(Tensor(raw))))

    def forward(self, z_t, t, z0, z1):
        squeeze = z_t.ndim == 3
        if squeeze:
            z_t = T.reshape(z_t, 1, *z_t.shape)
            z0 = T.reshape(z0, 1, *z0.shape)
            z1 = T.reshape(z1, 1, *z1.shape)
        if z_t.shape != z0.shape or z_t.shape != z1.shape:
            raise T.ShapeError("latents must share one shape")
        temb = self._temb(t, z_t.shape[0])

        h = self.stem(T.concat([z_t, z0, z1], axis=1))
        skips = []
        attn_iter = iter(self.down_attns)
        for i, block in enumerate(self.down_blocks):
            h = block(h, temb)
            if self._down_attn_map[i]:
                h = next(attn_iter)(h)
            skips.append(h)
            if i < len(self.down_blocks) - 1:
                h = self.downs[i](h)

        h = self.mid2(self.mid_attn(self.mid1(h, temb)), temb)

        attn_iter = iter(self.up_attns)
        for step, block in enumerate(self.up_blocks):
            h = block(T.concat([h, skips[-1 - step]], axis=1), temb)
            if self._up_attn_map[step]:
                h = next(attn_iter)(h)
            if step < len(self.ups):
                h = self.ups[step](h)

        out = self.conv_out(T.silu(self.norm_out(h)))
        return T.reshape(out, *out.shape[1:]) if squeeze else out

    __call__ = forward

    def as_denoiser(self):
        """Adapter matching the sampler's (z_t, t, z0, z1) callable contract."""
        return lambda z_t, t, z0, z1: self.forward(z_t, t, z0, z1)
