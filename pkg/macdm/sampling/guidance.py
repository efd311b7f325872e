from __future__ import annotations

import numpy as np
import torch

from macdm.core.exceptions import ShapeMismatchError
from macdm.diffusion.ranges import ensure_finite
from macdm.diffusion.schedule import NoiseSchedule, Timestep


def guidance_correction(
    grad: torch.Tensor, t: Timestep, gradient_scale: float, schedule: NoiseSchedule
) -> torch.Tensor:
    """√(1-ᾱ_t)·g·∇ log p(y | I_t); linear in g."""
    if gradient_scale < 0:
        raise ValueError(f"gradient scale must be non-negative, got {gradient_scale}")
    scale = schedule.gather(np.sqrt(1.0 - schedule.alphas_cumprod), t, grad, offset=0)
    return scale * (gradient_scale * grad)


def guided_eps(
    eps_hat: torch.Tensor,
    grad: torch.Tensor,
    t: Timestep,
    gradient_scale: float,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """
    Classifier-corrected noise ε̄ = ε̂ - √(1-ᾱ_t)·g·∇ log p(y | I_t).

    Applied to all three channels. g = 0 returns `eps_hat` itself.
    """
    if eps_hat.shape != grad.shape:
        raise ShapeMismatchError(f"eps {tuple(eps_hat.shape)} vs grad {tuple(grad.shape)}")
    schedule.check_timestep(t)
    ensure_finite(eps_hat, "noise prediction")
    ensure_finite(grad, "classifier gradient")
    if gradient_scale == 0:
        return eps_hat
    return eps_hat - guidance_correction(grad, t, gradient_scale, schedule)
