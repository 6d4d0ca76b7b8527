"""Denoiser training steps and the two latent samplers.

A denoiser is any callable (z_t, t, z0_cond, z1_cond) -> eps_hat with output
shaped like z_t. The ancestral sampler injects posterior noise per step; the
accelerated sampler is fully deterministic given its starting noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .schedule import forward_sample, mu_from_eps, simplified_loss


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "ddim"
    ddim_steps: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("ddpm", "ddim"):
            raise ValueError(f"unknown sampler mode '{self.mode}'")
        if self.ddim_steps < 1:
            raise ValueError("ddim_steps must be positive")


def train_step(triplet_latents, denoiser, sched, rng):
    """One noise-prediction objective evaluation with gradients populated.

    Draws one step index per sample and one Gaussian noise field, forms the
    noised target latent, and backpropagates the mean squared prediction
    error. Applying an optimizer update is the caller's job.
    """
    z0, zn, z1 = triplet_latents
    if not (z0.shape == zn.shape == z1.shape):
        raise T.ShapeError("triplet latents must share one shape")
    batched = zn.ndim == 4
    n = zn.shape[0] if batched else None
    t = rng.integers(1, sched.T + 1, size=n) if batched else int(rng.integers(1, sched.T + 1))
    eps = T.Tensor(rng.standard_normal(zn.shape).astype(zn.data.dtype))
    zt = forward_sample(zn, t, eps, sched)
    eps_hat = denoiser(zt, t, z0, z1)
    loss = simplified_loss(eps, eps_hat)
    if loss.requires_grad:
        loss.backward()
    return loss.item()


def ddim_step_sequence(sched_T, count):
    """Evenly spaced increasing step subsequence of 1..T ending at T."""
    if count < 1:
        raise ValueError("empty step subsequence")
    if count == 1:
        return [sched_T]
    steps = np.unique(np.rint(np.linspace(1, sched_T, min(count, sched_T))).astype(int))
    return [int(t) for t in steps]


def ddpm_sample(z0_cond, z1_cond, denoiser, sched, rng):
    """Ancestral sampling from pure noise down to the clean latent.

    Runs every step T..1; per-step variance is the exact posterior variance,
    which vanishes at the final step.
    """
    if z0_cond.shape != z1_cond.shape:
        raise T.ShapeError("conditioning latents must share one shape")
    z = T.Tensor(rng.standard_normal(z0_cond.shape).astype(z0_cond.data.dtype))
    for t in range(sched.T, 0, -1):
        try:
            eps_hat = denoiser(z, t, z0_cond, z1_cond).detach()
            mu = mu_from_eps(z, eps_hat, t, sched)
            sigma = float(np.sqrt(sched.beta_tilde[t - 1]))
            if sigma > 0.0:
                zeta = rng.standard_normal(z.shape).astype(z.data.dtype)
                z = T.Tensor(mu.data + sigma * zeta)
            else:
                z = mu.detach()
        except T.NumericsError as e:
            raise T.NumericsError(f"diverged at step t={t}: {e}") from e
    return z


def ddim_sample(z0_cond, z1_cond, denoiser, sched, steps, z_init):
    """Deterministic sampling over a step subsequence.

    `steps` is either a count (evenly spaced subsequence is built) or an
    explicit strictly increasing sequence ending at T. `z_init` supplies the
    starting noise; the output is a pure function of it, the conditioning,
    the subsequence, and the denoiser.
    """
    if z0_cond.shape != z1_cond.shape:
        raise T.ShapeError("conditioning latents must share one shape")
    if isinstance(steps, (int, np.integer)):
        seq = ddim_step_sequence(sched.T, int(steps))
    else:
        seq = [int(t) for t in steps]
        if not seq:
            raise ValueError("empty step subsequence")
        if any(b <= a for a, b in zip(seq, seq[1:])) or seq[-1] != sched.T:
            raise ValueError("steps must increase strictly and end at T")
    z = z_init.detach()
    for i in range(len(seq) - 1, -1, -1):
        t = seq[i]
        ab = sched.alpha_bar[t - 1]
        ab_prev = float(sched.alpha_bar_at(seq[i - 1] if i > 0 else 0))
        eps_hat = denoiser(z, t, z0_cond, z1_cond).detach()
        z0_hat = (z.data - np.sqrt(1.0 - ab) * eps_hat.data) / np.sqrt(ab)
        z = T.Tensor(np.sqrt(ab_prev) * z0_hat + np.sqrt(1.0 - ab_prev) * eps_hat.data)
    return z


def make_point_mass_oracle(z_star, sched):
    """Analytic denoiser that inverts the forward draw toward a fixed target.

    Solving the closed-form marginal for the injected noise gives
    eps*(z_t, t) = (z_t - sqrt(ab_t) * z_star) / sqrt(1 - ab_t).
    """

    def oracle(z_t, t, z0_cond=None, z1_cond=None):
        ab = sched.alpha_bar[int(t) - 1]
        out = (z_t.data - np.sqrt(ab) * z_star.data) / np.sqrt(1.0 - ab)
        return T.Tensor(out.astype(z_t.data.dtype))

    return oracle
