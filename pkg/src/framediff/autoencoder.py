"""Frame autoencoder: encoder with feature pyramids and a neighbor-aided
decoder that emits deformable synthesis kernels instead of pixels.

The encoder downsamples by a factor f through repeated (ResBlock + strided
conv) stages into a 3-channel latent, keeping each stage's pre-downsample
features as a pyramid. The decoder mirrors the stages, fuses the two
neighbor-frame pyramids at every level via cross-attention, and ends in four
heads (kernel factors, tap offsets, visibility, residual) that drive the
deformable synthesis of the output frame. The decoder never sees the target
frame itself, only its quantized latent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, MaxCrossBlock, MaxVitBlock
from .defconv import DeformableKernelSet, FrameKernels, synthesize_frame
from .nn import Conv2d, Downsample, GroupNorm, Module, ModuleList, ResBlock, Upsample
from .tensor import Tensor
from .vq import Codebook, quantize


@dataclass(frozen=True)
class AutoencoderConfig:
    f: int = 32
    base_channels: int = 32
    kernel_size: int = 5
    codebook_size: int = 8192
    window_size: int = 4
    head_count: int = 4
    latent_channels: int = 3
    lambda_vq: float = 1.0
    offset_scale: float = 2.0
    channel_mult: tuple = ()

    def __post_init__(self):
        if self.f < 2 or self.f & (self.f - 1):
            raise ValueError("downsampling factor must be a power of two >= 2")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd")
        if not self.channel_mult:
            object.__setattr__(self, "channel_mult",
                               tuple(2 ** i for i in range(self.stages)))
        if len(self.channel_mult) != self.stages:
            raise ValueError(f"channel_mult needs {self.stages} entries")

    @property
    def stages(self):
        return int(np.log2(self.f))

    @property
    def widths(self):
        return [self.base_channels * m for m in self.channel_mult]

    @property
    def attention(self):
        return AttentionConfig(self.window_size, self.head_count)


@dataclass
class EncoderOutput:
    """Latent code plus the per-stage feature pyramid (strides 1..f/2)."""

    z: Tensor
    pyramid: list = field(default_factory=list)
    orig_hw: tuple = ()


def pad_to_multiple(img, f):
    """Zero-pad trailing spatial dims up to a multiple of f."""
    h, w = img.shape[-2:]
    ph = (f - h % f) % f
    pw = (f - w % f) % f
    if ph or pw:
        img = T.pad2d(img, 0, ph, 0, pw)
    return img, (h, w)


class Encoder(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        widths = cfg.widths
        self.stem = Conv2d(3, widths[0], 3, rng)
        blocks, downs = [], []
        for i in range(cfg.stages):
            blocks.append(ResBlock(widths[i], widths[i], rng))
            nxt = widths[min(i + 1, cfg.stages - 1)]
            downs.append(Downsample(widths[i], nxt, rng))
        self.blocks = ModuleList(blocks)
        self.downs = ModuleList(downs)
        self.mid = ResBlock(widths[-1], widths[-1], rng)
        self.attn = MaxVitBlock(widths[-1], cfg.attention, rng)
        self.norm_out = GroupNorm(widths[-1])
        self.conv_out = Conv2d(widths[-1], cfg.latent_channels, 3, rng)

    def forward(self, img):
        squeeze = img.ndim == 3
        x = T.reshape(img, 1, *img.shape) if squeeze else img
        x, orig_hw = pad_to_multiple(x, self.cfg.f)
        h = self.stem(x)
        pyramid = []
        for block, down in zip(self.blocks, self.downs):
            h = block(h)
            pyramid.append(h)
            h = down(h)
        h = self.attn(self.mid(h))
        z = self.conv_out(T.silu(self.norm_out(h)))
        if squeeze:
            z = T.reshape(z, *z.shape[1:])
        return EncoderOutput(z=z, pyramid=pyramid, orig_hw=orig_hw)

    __call__ = forward


class _Head(Module):
    """3 x {conv3x3, ReLU} stack plus a linear projection to the output maps."""

    def __init__(self, cin, hidden, cout, rng):
        super().__init__()
        self.c1 = Conv2d(cin, hidden, 3, rng)
        self.c2 = Conv2d(hidden, hidden, 3, rng)
        self.c3 = Conv2d(hidden, hidden, 3, rng)
        self.proj = Conv2d(hidden, cout, 1, rng)

    def forward(self, x):
        h = T.relu(self.c1(x))
        h = T.relu(self.c2(h))
        h = T.relu(self.c3(h))
        return self.proj(h)

    __call__ = forward


class Decoder(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        widths = cfg.widths
        k = cfg.kernel_size
        self.conv_in = Conv2d(cfg.latent_channels, widths[-1], 3, rng)
        self.mid = ResBlock(widths[-1], widths[-1], rng)
        self.attn = MaxVitBlock(widths[-1], cfg.attention, rng)
        ups, fuses, blocks = [], [], []
        for i in range(cfg.stages - 1, -1, -1):
            src = widths[min(i + 1, cfg.stages - 1)]
            ups.append(Upsample(src, widths[i], rng))
            fuses.append(MaxCrossBlock(widths[i], cfg.attention, rng))
            blocks.append(ResBlock(widths[i], widths[i], rng))
        self.ups = ModuleList(ups)
        self.fuses = ModuleList(fuses)
        self.blocks = ModuleList(blocks)
        self.norm_out = GroupNorm(widths[0])
        hidden = max(cfg.base_channels // 2, 8)
        self.kernel_head = _Head(widths[0], hidden, 4 * k, rng)
        self.offset_head = _Head(widths[0], hidden, 4 * k * k, rng)
        self.visibility_head = _Head(widths[0], hidden, 1, rng)
        self.residual_head = _Head(widths[0], hidden, 1, rng)
        self._init_heads_at_blend()

    def _init_heads_at_blend(self):
        # start near the plain two-frame blend (center-tap prior, v~0.5,
        # delta=0) while keeping the projections live so gradient reaches the
        # decoder stream from the first step
        k = self.cfg.kernel_size
        for head in (self.kernel_head, self.offset_head, self.visibility_head):
            head.proj.w.data = (head.proj.w.data * 0.05).astype(np.float32)
            head.proj.b.data = np.zeros_like(head.proj.b.data)
        self.residual_head.proj.w.data = np.zeros_like(self.residual_head.proj.w.data)
        self.residual_head.proj.b.data = np.zeros_like(self.residual_head.proj.b.data)
        bias = self.kernel_head.proj.b.data
        for block in range(4):
            bias[block * k + (k - 1) // 2] = 2.0

    def forward(self, z_q, phi0, phi1, i0, i1):
        squeeze = z_q.ndim == 3
        h = T.reshape(z_q, 1, *z_q.shape) if squeeze else z_q
        i0b = T.reshape(i0, 1, *i0.shape) if i0.ndim == 3 else i0
        i1b = T.reshape(i1, 1, *i1.shape) if i1.ndim == 3 else i1
        if len(phi0) != self.cfg.stages or len(phi1) != self.cfg.stages:
            raise T.ShapeError(f"expected {self.cfg.stages} pyramid levels")
        i0p, orig_hw = pad_to_multiple(i0b, self.cfg.f)
        i1p, _ = pad_to_multiple(i1b, self.cfg.f)

        h = self.attn(self.mid(self.conv_in(h)))
        for step, i in enumerate(range(self.cfg.stages - 1, -1, -1)):
            h = self.ups[step](h)
            p0, p1 = phi0[i], phi1[i]
            if h.shape[-2:] != p0.shape[-2:] or h.shape[-2:] != p1.shape[-2:]:
                raise T.ShapeError(
                    f"pyramid level {i} is {p0.shape[-2:]}, decoder at {h.shape[-2:]}")
            if min(h.shape[-2:]) >= 4:
                h = self.fuses[step](h, p0, p1)
            h = self.blocks[step](h)
        feats = T.silu(self.norm_out(h))

        ks = self._kernel_set(feats)
        out = synthesize_frame(i0p, i1p, ks)
        oh, ow = orig_hw
        if out.shape[-2:] != (oh, ow):
            out = out[:, :, :oh, :ow]
        if squeeze:
            out = T.reshape(out, *out.shape[1:])
        return ks, out

    def _kernel_set(self, feats):
        k = self.cfg.kernel_size
        n, _, h, w = feats.shape

        def factors(t):
            # (N, K, H, W) -> softmax-normalized (N, H, W, K)
            return T.softmax(T.transpose(t, 0, 2, 3, 1), axis=-1)

        def offsets(t):
            # pre-scaled so the raw head output only travels a fraction of a tap
            raw = T.reshape(T.transpose(t, 0, 2, 3, 1), n, h, w, k, k)
            return T.scale(raw, self.cfg.offset_scale)

        kmaps = self.kernel_head(feats)
        omaps = self.offset_head(feats)
        frame0 = FrameKernels(
            kernel_v=factors(kmaps[:, 0 * k:1 * k]),
            kernel_h=factors(kmaps[:, 1 * k:2 * k]),
            offset_y=offsets(omaps[:, 0 * k * k:1 * k * k]),
            offset_x=offsets(omaps[:, 1 * k * k:2 * k * k]),
        )
        frame1 = FrameKernels(
            kernel_v=factors(kmaps[:, 2 * k:3 * k]),
            kernel_h=factors(kmaps[:, 3 * k:4 * k]),
            offset_y=offsets(omaps[:, 2 * k * k:3 * k * k]),
            offset_x=offsets(omaps[:, 3 * k * k:4 * k * k]),
        )
        vis = T.sigmoid(T.reshape(self.visibility_head(feats), n, h, w))
        res = T.reshape(self.residual_head(feats), n, h, w)
        return DeformableKernelSet(frame0, frame1, vis, res)

    __call__ = forward


class Autoencoder(Module):
    """Encoder, decoder, and the shared quantization codebook."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.codebook = Codebook(cfg.codebook_size, cfg.latent_channels, rng)
        self.codebook_entries = self.codebook.entries

    def encode(self, img):
        return self.encoder(img)

    def decode(self, z_q, phi0, phi1, i0, i1):
        return self.decoder(z_q, phi0, phi1, i0, i1)

    def reconstruct(self, i0, i_target, i1):
        """Quantized round trip of the target frame, aided by its neighbors."""
        enc0, encn, enc1 = self.encode(i0), self.encode(i_target), self.encode(i1)
        z_q, indices, _ = quantize(encn.z, self.codebook)
        _, out = self.decode(z_q, enc0.pyramid, enc1.pyramid, i0, i1)
        return out, indices


def autoencoder_train_step(triplet, model, lambda_vq=None):
    """Reconstruction + quantization losses with gradients populated.

    triplet is (i0, i_target, i1), each [N,3,H,W] in [-1,1]. The three frames
    share one stacked encoder pass. Returns the component losses as floats.
    """
    i0, i_target, i1 = triplet
    lam = model.cfg.lambda_vq if lambda_vq is None else lambda_vq
    n = i0.shape[0]
    stacked = T.concat([i0, i_target, i1], axis=0)
    enc = model.encode(stacked)
    z_n = enc.z[n:2 * n]
    phi0 = [lvl[0:n] for lvl in enc.pyramid]
    phi1 = [lvl[2 * n:3 * n] for lvl in enc.pyramid]
    z_q, _, vq_loss = quantize(z_n, model.codebook)
    _, out = model.decode(z_q, phi0, phi1, i0, i1)
    diff = out - i_target
    l1 = T.tmean(T.tabs(diff))
    total = l1 + T.scale(vq_loss, lam) if lam else l1
    total.backward()
    return {"l1": l1.item(), "vq": vq_loss.item(), "total": total.item()}
