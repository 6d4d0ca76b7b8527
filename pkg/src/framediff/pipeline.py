"""End-to-end orchestration: two-stage training, interpolation, evaluation.

Stage 1 trains the frame autoencoder on center-frame reconstruction; stage 2
freezes it and trains the latent denoiser on noise prediction. Inference
encodes the two given frames, samples the middle latent conditioned on them,
and decodes through the deformable synthesis path.

Every random draw comes from a stream derived from (seed, stage, step), so
interrupted runs resume bit-exactly and identical seeds give byte-identical
artifacts.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from . import tensor as T
from .autoencoder import Autoencoder, AutoencoderConfig, autoencoder_train_step
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_from_dict, config_to_dict
from .data import (
    DataError,
    FrameTriplet,
    augment_triplet,
    list_triplet_dirs,
    load_triplet,
    read_image,
    write_image,
)
from .denoiser import DenoisingUNet, UNetConfig
from .metrics import psnr, ssim
from .optim import Adam
from .rng import derive_rng
from .sampler import ddim_sample, ddpm_sample, train_step
from .schedule import make_linear_schedule
from .tensor import Tensor
from .vq import quantize


def ae_config(cfg: RunConfig) -> AutoencoderConfig:
    stages = int(np.log2(cfg.f))
    return AutoencoderConfig(
        f=cfg.f,
        base_channels=cfg.ae_base_channels,
        kernel_size=cfg.K,
        codebook_size=cfg.codebook_size,
        window_size=cfg.window_size,
        head_count=cfg.head_count,
        lambda_vq=cfg.lambda_vq,
        channel_mult=tuple(2 ** i for i in range(stages)),
    )


def unet_config(cfg: RunConfig) -> UNetConfig:
    return UNetConfig(
        base_channels=cfg.base_channels,
        channel_mult=cfg.channel_mult,
        attn_depths=cfg.attn_depths,
        time_embed_dim=cfg.time_embed_dim,
        window_size=cfg.window_size,
        head_count=cfg.head_count,
    )


def build_autoencoder(cfg: RunConfig) -> Autoencoder:
    return Autoencoder(ae_config(cfg), derive_rng(cfg.seed, "init-ae"))


def build_denoiser(cfg: RunConfig) -> DenoisingUNet:
    return DenoisingUNet(unet_config(cfg), derive_rng(cfg.seed, "init-dn"))


def _save_model(path, model, cfg, step, opt=None):
    tensors = dict(model.state())
    tensors["meta.step"] = np.array([step], dtype=np.float32)
    if opt is not None:
        tensors.update(opt.state())
    save_checkpoint(path, tensors, config_to_dict(cfg))


def _load_model(path, builder):
    tensors, echo = load_checkpoint(path)
    cfg = config_from_dict(echo)
    model = builder(cfg)
    params = {k: v for k, v in tensors.items()
              if not k.startswith(("opt.", "meta."))}
    model.load_state(params)
    step = int(tensors.get("meta.step", np.zeros(1))[0])
    return model, cfg, step, tensors


def load_autoencoder(path):
    model, cfg, step, tensors = _load_model(path, build_autoencoder)
    return model, cfg, step, tensors


def load_denoiser(path):
    model, cfg, step, tensors = _load_model(path, build_denoiser)
    return model, cfg, step, tensors


def _dataset_arrays(data_dir, crop):
    """All triplets decoded once into float32 arrays (order is directory order)."""
    triplets = []
    for tdir in list_triplet_dirs(data_dir):
        tri = load_triplet(tdir)
        _, h, w = tri.i0.shape
        if crop and (h < crop or w < crop):
            raise DataError(f"{tdir}: frames {h}x{w} smaller than crop {crop}")
        triplets.append(tri)
    return triplets


def _augmented_batch(triplets, cfg, stage, step):
    rng = derive_rng(cfg.seed, stage, step)
    picks = rng.integers(0, len(triplets), size=cfg.batch)
    crop = cfg.crop or None
    batch = []
    for pick in picks:
        tri = triplets[int(pick)]
        if cfg.augment:
            tri = augment_triplet(tri, rng, crop=crop)
        elif crop:
            _, h, w = tri.i0.shape
            if (h, w) != (crop, crop):
                tri = augment_triplet(tri, rng, crop=crop, flips=False, time_reverse=False)
        batch.append(tri)
    stack = lambda frames: Tensor(np.stack(frames).astype(np.float32))
    return (stack([t.i0 for t in batch]),
            stack([t.mid for t in batch]),
            stack([t.i1 for t in batch]))


def _lr_at(step, total, peak, warmup=20, floor_frac=0.1):
    """Linear warmup then cosine decay to a fraction of the peak rate."""
    if step < warmup:
        return peak * (step + 1) / warmup
    span = max(total - warmup, 1)
    progress = min((step - warmup) / span, 1.0)
    floor = peak * floor_frac
    return floor + (peak - floor) * 0.5 * (1.0 + np.cos(np.pi * progress))


def train_autoencoder(cfg, data_dir, out_path, resume=None, log_cb=None):
    """Stage 1: reconstruction + quantization training. Returns loss rows."""
    triplets = _dataset_arrays(data_dir, cfg.crop or None)
    model = build_autoencoder(cfg)
    opt = Adam(model.named_parameters(), lr=cfg.ae_lr)
    start = 0
    if resume:
        rmodel, rcfg, start, tensors = load_autoencoder(resume)
        model.load_state({k: v for k, v in tensors.items()
                          if not k.startswith(("opt.", "meta."))})
        opt.load_state(tensors)
    rows = []
    for step in range(start, cfg.ae_steps):
        batch = _augmented_batch(triplets, cfg, "ae-batch", step)
        opt.zero_grad()
        losses = autoencoder_train_step(batch, model)
        opt.lr = _lr_at(step, cfg.ae_steps, cfg.ae_lr)
        opt.step()
        rows.append((step, losses["l1"], losses["vq"], losses["total"]))
        if log_cb:
            log_cb(step, losses)
        if cfg.ckpt_every and (step + 1) % cfg.ckpt_every == 0:
            _save_model(f"{out_path}.step{step + 1}", model, cfg, step + 1, opt)
    _save_model(out_path, model, cfg, cfg.ae_steps, opt)
    return rows


def _encode_dataset_latents(model, triplets):
    """Frozen-encoder latents for every frame of every triplet."""
    outs = []
    for tri in triplets:
        stacked = Tensor(np.stack([tri.i0, tri.mid, tri.i1]).astype(np.float32))
        enc = model.encode(stacked)
        outs.append(enc.z.data.copy())
    return outs


def train_denoiser(cfg, data_dir, ae_path, out_path, resume=None, log_cb=None):
    """Stage 2: noise-prediction training against the frozen autoencoder.

    Latents are precomputed once (the encoder is frozen, so they are
    constants); temporal-reversal augmentation swaps the conditioning pair
    at the latent level.
    """
    ae, ae_cfg, _, _ = load_autoencoder(ae_path)
    ae.requires_grad_(False)
    enc_state_before = {k: v.copy() for k, v in ae.state().items()}
    triplets = _dataset_arrays(data_dir, cfg.crop or None)
    if cfg.crop:
        fixed = []
        rng0 = derive_rng(cfg.seed, "dn-crop")
        for tri in triplets:
            _, h, w = tri.i0.shape
            if (h, w) != (cfg.crop, cfg.crop):
                tri = augment_triplet(tri, rng0, crop=cfg.crop, flips=False, time_reverse=False)
            fixed.append(tri)
        triplets = fixed
    latents = _encode_dataset_latents(ae, triplets)
    sched = make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    model = build_denoiser(cfg)
    opt = Adam(model.named_parameters(), lr=cfg.dn_lr)
    start = 0
    if resume:
        _, _, start, tensors = load_denoiser(resume)
        model.load_state({k: v for k, v in tensors.items()
                          if not k.startswith(("opt.", "meta."))})
        opt.load_state(tensors)
    denoiser = model.as_denoiser()
    rows = []
    for step in range(start, cfg.dn_steps):
        rng = derive_rng(cfg.seed, "dn-batch", step)
        picks = rng.integers(0, len(latents), size=cfg.batch)
        swaps = rng.random(cfg.batch) < 0.5
        z0s, zns, z1s = [], [], []
        for pick, swap in zip(picks, swaps):
            z = latents[int(pick)]
            a, b = (2, 0) if swap else (0, 2)
            z0s.append(z[a])
            zns.append(z[1])
            z1s.append(z[b])
        trip = (Tensor(np.stack(z0s)), Tensor(np.stack(zns)), Tensor(np.stack(z1s)))
        opt.zero_grad()
        loss = train_step(trip, denoiser, sched, rng)
        opt.lr = _lr_at(step, cfg.dn_steps, cfg.dn_lr)
        opt.step()
        rows.append((step, loss))
        if log_cb:
            log_cb(step, {"loss": loss})
        if cfg.ckpt_every and (step + 1) % cfg.ckpt_every == 0:
            _save_model(f"{out_path}.step{step + 1}", model, cfg, step + 1, opt)
    for key, before in enc_state_before.items():
        if not np.array_equal(before, ae.state()[key]):
            raise RuntimeError(f"frozen autoencoder parameter {key} changed")
    _save_model(out_path, model, cfg, cfg.dn_steps, opt)
    return rows


@dataclasses.dataclass
class InterpolationModel:
    """Loaded model pair plus the sampling configuration."""

    ae: Autoencoder
    dn: DenoisingUNet
    cfg: RunConfig

    @classmethod
    def load(cls, ae_path, dn_path, mode=None, ddim_steps=None, seed=None):
        ae, ae_cfg, _, _ = load_autoencoder(ae_path)
        dn, dn_cfg, _, _ = load_denoiser(dn_path)
        if config_to_dict(ae_cfg)["f"] != config_to_dict(dn_cfg)["f"]:
            raise DataError("autoencoder and denoiser checkpoints disagree on f")
        cfg = dn_cfg
        if mode is not None:
            cfg = dataclasses.replace(cfg, mode=mode)
        if ddim_steps is not None:
            cfg = dataclasses.replace(cfg, ddim_steps=ddim_steps)
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=seed)
        ae.requires_grad_(False)
        dn.requires_grad_(False)
        return cls(ae=ae, dn=dn, cfg=cfg.validate())

    def interpolate_arrays(self, i0, i1, draw=0):
        """Middle frame for a pair of [3,H,W] arrays in [-1,1]."""
        if i0.shape != i1.shape:
            raise DataError(f"input frames differ in size: {i0.shape} vs {i1.shape}")
        cfg = self.cfg
        sched = make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
        stacked = Tensor(np.stack([i0, i1]).astype(np.float32))
        enc = self.ae.encode(stacked)
        z0 = Tensor(enc.z.data[0])
        z1 = Tensor(enc.z.data[1])
        phi0 = [Tensor(lvl.data[0:1]) for lvl in enc.pyramid]
        phi1 = [Tensor(lvl.data[1:2]) for lvl in enc.pyramid]
        denoiser = self.dn.as_denoiser()
        rng = derive_rng(cfg.seed, "sample", draw)
        if cfg.mode == "ddim":
            z_init = Tensor(rng.standard_normal(z0.shape).astype(np.float32))
            z = ddim_sample(z0, z1, denoiser, sched, cfg.ddim_steps, z_init)
        else:
            z = ddpm_sample(z0, z1, denoiser, sched, rng)
        z_q, _, _ = quantize(Tensor(z.data[None]), self.ae.codebook)
        i0t = Tensor(np.asarray(i0, dtype=np.float32)[None])
        i1t = Tensor(np.asarray(i1, dtype=np.float32)[None])
        _, out = self.ae.decode(z_q, phi0, phi1, i0t, i1t)
        return out.data[0]


def interpolate_files(model, frame0_path, frame1_path, out_path):
    i0 = read_image(frame0_path)
    i1 = read_image(frame1_path)
    out = model.interpolate_arrays(i0, i1)
    write_image(out_path, out)
    return out


def interpolate_x4(first, last, interp_fn):
    """Three intermediate frames via the fixed recursion order.

    The middle (3rd of 5) comes from the endpoints, then the 2nd from
    (first, middle) and the 4th from (middle, last). Returns [f2, f3, f4].
    """
    f3 = interp_fn(first, last)
    f2 = interp_fn(first, f3)
    f4 = interp_fn(f3, last)
    return [f2, f3, f4]


def average_baseline(i0, i1):
    return 0.5 * (np.asarray(i0, dtype=np.float32) + np.asarray(i1, dtype=np.float32))


def evaluate(data_dir, metrics, model=None, ae_only=None, save_dir=None):
    """Per-triplet metric rows between predictions and ground-truth middles.

    Provide `model` for full diffusion inference or `ae_only` (an
    Autoencoder) to score quantized reconstruction of the true middle frame.
    Returns (rows, means): rows are (source, {metric: value}).
    """
    known = {"psnr": psnr, "ssim": ssim}
    bad = [m for m in metrics if m not in known]
    if bad:
        raise ValueError(f"unknown metrics: {bad}; supported: {sorted(known)}")
    if (model is None) == (ae_only is None):
        raise ValueError("exactly one of model/ae_only must be given")
    rows = []
    save_dir = Path(save_dir) if save_dir else None
    if save_dir:
        save_dir.mkdir(parents=True, exist_ok=True)
    for k, tdir in enumerate(list_triplet_dirs(data_dir)):
        tri = load_triplet(tdir)
        if model is not None:
            pred = model.interpolate_arrays(tri.i0, tri.i1, draw=k)
        else:
            out, _ = ae_only.reconstruct(
                Tensor(tri.i0[None]), Tensor(tri.mid[None]), Tensor(tri.i1[None]))
            pred = out.data[0]
        if save_dir:
            write_image(save_dir / f"{Path(tri.source).name}.png", pred)
        rows.append((Path(tri.source).name,
                     {m: known[m](pred, tri.mid) for m in metrics}))
    if not rows:
        raise DataError(f"no triplets found under {data_dir}")
    means = {m: float(np.mean([r[1][m] for r in rows])) for m in metrics}
    return rows, means
