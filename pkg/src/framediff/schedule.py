"""Noise schedule tables and the closed-form diffusion identities.

All per-step coefficient tables are float64 and indexed by t in 1..T; the
step-0 cumulative product is defined as 1 so the first posterior variance
is exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variance tables of the forward noising chain.

    beta[t-1], alpha[t-1], alpha_bar[t-1] and beta_tilde[t-1] hold the values
    for step t. alpha_bar is strictly decreasing; beta_tilde[0] == 0.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    beta_tilde: np.ndarray = field(repr=False)

    def alpha_bar_at(self, t):
        """alpha_bar for step t with the t=0 convention alpha_bar_0 = 1."""
        t = np.asarray(t)
        return np.where(t >= 1, self.alpha_bar[np.maximum(t, 1) - 1], 1.0)


def make_linear_schedule(steps, beta_start, beta_end):
    """Build the tables for a linear beta ramp inclusive of both endpoints."""
    if steps < 1:
        raise ValueError("schedule needs at least one step")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"betas out of range: ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    prev = np.concatenate(([1.0], alpha_bar[:-1]))
    beta_tilde = (1.0 - prev) / (1.0 - alpha_bar) * beta
    return NoiseSchedule(steps, beta, alpha, alpha_bar, beta_tilde)


def _check_t(t, s):
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > s.T):
        raise ValueError(f"step index {t} outside 1..{s.T}")
    return t


def _coef(value, like):
    """Broadcast a per-step scalar or per-sample vector against a tensor."""
    arr = np.asarray(value, dtype=like.data.dtype)
    if arr.ndim == 0:
        return float(arr)
    return T.Tensor(arr.reshape((-1,) + (1,) * (like.ndim - 1)))


def forward_sample(z0, t, eps, s):
    """Closed-form marginal draw: sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps.

    t may be a single step or one step per leading-axis sample.
    """
    if z0.shape != eps.shape:
        raise T.ShapeError(f"z0 {z0.shape} and eps {eps.shape} differ")
    t = _check_t(t, s)
    ab = s.alpha_bar[t - 1]
    return T.mul(z0, _coef(np.sqrt(ab), z0)) + T.mul(eps, _coef(np.sqrt(1.0 - ab), eps))


def posterior_params(zt, z0, t, s):
    """Mean and variance of the exact reverse conditional given (zt, z0)."""
    if zt.shape != z0.shape:
        raise T.ShapeError(f"zt {zt.shape} and z0 {z0.shape} differ")
    t = _check_t(t, s)
    ab = s.alpha_bar[t - 1]
    ab_prev = s.alpha_bar_at(t - 1)
    beta = s.beta[t - 1]
    alpha = s.alpha[t - 1]
    c0 = np.sqrt(ab_prev) * beta / (1.0 - ab)
    ct = np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab)
    mu = T.mul(z0, _coef(c0, z0)) + T.mul(zt, _coef(ct, zt))
    beta_tilde = s.beta_tilde[t - 1]
    return mu, beta_tilde


def mu_from_eps(zt, eps_hat, t, s):
    """Posterior mean recovered from a noise prediction instead of z0."""
    if zt.shape != eps_hat.shape:
        raise T.ShapeError(f"zt {zt.shape} and eps_hat {eps_hat.shape} differ")
    t = _check_t(t, s)
    alpha = s.alpha[t - 1]
    ab = s.alpha_bar[t - 1]
    ce = (1.0 - alpha) / np.sqrt(1.0 - ab)
    inner = zt - T.mul(eps_hat, _coef(ce, eps_hat))
    return T.mul(inner, _coef(1.0 / np.sqrt(alpha), inner))


def simplified_loss(eps, eps_hat):
    """Mean squared error between true and predicted noise (mean reduction)."""
    if eps.shape != eps_hat.shape:
        raise T.ShapeError(f"eps {eps.shape} and eps_hat {eps_hat.shape} differ")
    d = eps - eps_hat
    return T.tmean(T.mul(d, d))
