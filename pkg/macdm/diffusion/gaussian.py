"""
Closed-form Gaussian algebra of the forward and reverse processes.

All functions are pure: they read the schedule tables and never mutate their inputs. Timesteps
follow the 1..T convention with ᾱ_0 = 1; `t` may be an int or a (B,) long tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch

from macdm.core.exceptions import NumericalError, ShapeMismatchError

from .enums import VarianceMode
from .schedule import NoiseSchedule, Timestep

# Below this ᾱ_t the x0 inversion divides by (almost) zero.
ALPHA_BAR_FLOOR = 1e-12


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def forward_marginal_sample(
    x0: torch.Tensor, t: Timestep, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Draw of q(x_t | x_0): √ᾱ_t·x0 + √(1-ᾱ_t)·eps."""
    schedule.check_timestep(t)
    _same_shape(x0, eps, "x0/eps")
    ab = schedule.alphas_cumprod
    sqrt_ab = schedule.gather(np.sqrt(ab), t, x0, offset=0)
    sqrt_1mab = schedule.gather(np.sqrt(1.0 - ab), t, x0, offset=0)
    return sqrt_ab * x0 + sqrt_1mab * eps


def forward_step_sample(
    x_prev: torch.Tensor, t: Timestep, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """One draw of q(x_t | x_{t-1}): √(1-β_t)·x_prev + √β_t·eps."""
    schedule.check_timestep(t)
    _same_shape(x_prev, eps, "x_prev/eps")
    keep = schedule.gather(np.sqrt(schedule.alphas), t, x_prev)
    add = schedule.gather(np.sqrt(schedule.betas), t, x_prev)
    return keep * x_prev + add * eps


def _posterior_coefficients(schedule: NoiseSchedule) -> Tuple[np.ndarray, np.ndarray]:
    ab = schedule.alphas_cumprod
    denom = 1.0 - ab[1:]
    coef_x0 = np.divide(
        np.sqrt(ab[:-1]) * schedule.betas, denom, out=np.ones_like(denom), where=denom > 0
    )
    coef_xt = np.divide(
        np.sqrt(schedule.alphas) * (1.0 - ab[:-1]), denom, out=np.zeros_like(denom), where=denom > 0
    )
    return coef_x0, coef_xt


def _guard_degenerate(t: Timestep, schedule: NoiseSchedule) -> None:
    ts = t.detach().cpu().long().numpy().ravel() if isinstance(t, torch.Tensor) else np.asarray([int(t)])
    bad = ts[(ts > 1) & (schedule.alphas_cumprod[ts] >= 1.0)]
    if bad.size:
        raise NumericalError(
            "posterior undefined where ᾱ_t = 1 and t > 1", {"timesteps": bad.tolist()}
        )


def posterior_moments(
    x0: torch.Tensor, xt: torch.Tensor, t: Timestep, schedule: NoiseSchedule
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Mean and variance of q(x_{t-1} | x_t, x_0).

    At t = 1 the posterior collapses onto x0: the mean is x0 and the variance exactly 0.
    """
    schedule.check_timestep(t)
    _same_shape(x0, xt, "x0/xt")
    _guard_degenerate(t, schedule)
    coef_x0, coef_xt = _posterior_coefficients(schedule)
    mean = schedule.gather(coef_x0, t, xt) * x0 + schedule.gather(coef_xt, t, xt) * xt
    variance = schedule.gather(schedule.posterior_variance, t, xt)
    if isinstance(t, torch.Tensor):
        first = (t == 1).reshape(-1, *([1] * (xt.dim() - 1))).to(xt.device)
        mean = torch.where(first, x0, mean)
    elif int(t) == 1:
        mean = x0.clone()
    return mean, variance


def predict_x0_from_eps(
    xt: torch.Tensor,
    t: Timestep,
    eps_hat: torch.Tensor,
    schedule: NoiseSchedule,
    clip: bool = False,
) -> torch.Tensor:
    """Invert the closed-form marginal: (x_t - √(1-ᾱ_t)·eps_hat) / √ᾱ_t."""
    schedule.check_timestep(t)
    _same_shape(xt, eps_hat, "xt/eps_hat")
    ab = schedule.gather(schedule.alphas_cumprod, t, xt, offset=0)
    if bool((ab <= ALPHA_BAR_FLOOR).any()):
        raise NumericalError("ᾱ_t below numeric floor; x0 is unrecoverable", {"floor": ALPHA_BAR_FLOOR})
    x0 = (xt - torch.sqrt(1.0 - ab) * eps_hat) / torch.sqrt(ab)
    return x0.clamp(-1.0, 1.0) if clip else x0


def eps_posterior_mean(
    xt: torch.Tensor, t: Timestep, eps_hat: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """ε-parameterised reverse mean (1/√α_t)·(x_t - β_t/√(1-ᾱ_t)·ε̂)."""
    schedule.check_timestep(t)
    _same_shape(xt, eps_hat, "xt/eps_hat")
    alpha = schedule.gather(schedule.alphas, t, xt)
    beta = schedule.gather(schedule.betas, t, xt)
    sqrt_1mab = schedule.gather(np.sqrt(1.0 - schedule.alphas_cumprod[1:]), t, xt)
    return (xt - beta / sqrt_1mab * eps_hat) / torch.sqrt(alpha)


@dataclass
class ReverseMoments:
    """Moments of p_θ(x_{t-1} | x_t) plus the x0 estimate they were built from."""

    mean: torch.Tensor
    variance: torch.Tensor
    log_variance: torch.Tensor
    x0_hat: torch.Tensor


def reverse_moments(
    xt: torch.Tensor,
    t: Timestep,
    eps_hat: torch.Tensor,
    schedule: NoiseSchedule,
    v: Optional[torch.Tensor] = None,
    variance_mode: VarianceMode = VarianceMode.LEARNED_RANGE,
    clip_x0: bool = False,
) -> ReverseMoments:
    """
    Reverse-process moments from a noise prediction.

    Without clipping the mean is the ε-parameterised mean; with clipping it is the posterior mean
    evaluated at the clipped x0 estimate. Learned-range variance interpolates per pixel:
    log Σ = v·log β_t + (1-v)·log β̃_t.
    """
    x0_hat = predict_x0_from_eps(xt, t, eps_hat, schedule, clip=clip_x0)
    if clip_x0:
        mean, _ = posterior_moments(x0_hat, xt, t, schedule)
    else:
        mean = eps_posterior_mean(xt, t, eps_hat, schedule)

    min_log = schedule.gather(schedule.posterior_log_variance_clipped, t, xt)
    max_log = schedule.gather(schedule.log_betas, t, xt)
    if variance_mode == VarianceMode.LEARNED_RANGE:
        if v is None:
            raise ValueError("learned-range variance needs the model's v output")
        _same_shape(xt, v, "xt/v")
        log_variance = v * max_log + (1.0 - v) * min_log
    elif variance_mode == VarianceMode.FIXED_LARGE:
        log_variance = max_log * torch.ones_like(xt)
    else:
        log_variance = min_log * torch.ones_like(xt)
    return ReverseMoments(
        mean=mean,
        variance=torch.exp(log_variance),
        log_variance=log_variance,
        x0_hat=x0_hat,
    )
