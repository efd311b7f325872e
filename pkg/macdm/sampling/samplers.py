"""
Reverse-process stepping: ancestral DDPM and DDIM, plus the shared guided chain driver.

The chain state is always the unweighted (image, bone, lesion) stack in [-1, 1]; channel weights
are applied only when building network inputs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from macdm.core.exceptions import TimestepError
from macdm.diffusion.enums import SamplerKind, VarianceMode
from macdm.diffusion.gaussian import predict_x0_from_eps, reverse_moments
from macdm.diffusion.ranges import ensure_finite
from macdm.diffusion.schedule import NoiseSchedule
from macdm.networks.inference import (
    DenoiserOutput,
    NoisyTriplet,
    classifier_input_gradient,
    denoiser_forward,
)
from macdm.schemas.sampling import GuidanceSpec

from .guidance import guided_eps

logger = logging.getLogger(__name__)


def ddim_timesteps(start: int, steps: int) -> List[int]:
    """Descending visit order: a uniform stride over [1, start], then 0."""
    if start < 0:
        raise TimestepError(f"start step must be non-negative, got {start}")
    if start == 0:
        return []
    if steps < 1:
        raise TimestepError("DDIM needs at least one step when start > 0")
    grid = np.round(np.linspace(1, start, min(steps, start))).astype(int)
    return [int(t) for t in np.unique(grid)[::-1]] + [0]


def ddpm_step(
    xt: torch.Tensor,
    out: DenoiserOutput,
    t: int,
    noise: torch.Tensor,
    schedule: NoiseSchedule,
    variance_mode: VarianceMode = VarianceMode.LEARNED_RANGE,
    clip_x0: bool = False,
) -> torch.Tensor:
    """One ancestral step x_t -> x_{t-1}; at t = 1 the mean is returned with no noise."""
    schedule.check_timestep(t)
    moments = reverse_moments(
        xt, t, out.eps_hat, schedule, v=out.v, variance_mode=variance_mode, clip_x0=clip_x0
    )
    if t == 1:
        return moments.mean
    return moments.mean + torch.exp(0.5 * moments.log_variance) * noise


def ddim_sigma(t: int, t_prev: int, eta: float, schedule: NoiseSchedule) -> float:
    if eta == 0:
        return 0.0
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    return eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_prev)


def ddim_step(
    xt: torch.Tensor,
    out: DenoiserOutput,
    t: int,
    t_prev: int,
    eta: float,
    schedule: NoiseSchedule,
    noise: Optional[torch.Tensor] = None,
    clip_x0: bool = False,
) -> torch.Tensor:
    """
    x_{t_prev} = √ᾱ_prev·x̂0 + √(1-ᾱ_prev-σ²)·ε̂ + σ·z.

    eta = 0 adds no noise; t_prev = 0 returns x̂0.
    """
    if not (0 <= t_prev < t <= schedule.timesteps):
        raise TimestepError(f"invalid DDIM step pair t={t}, t_prev={t_prev}")
    if not 0 <= eta <= 1:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    x0_hat = predict_x0_from_eps(xt, t, out.eps_hat, schedule, clip=clip_x0)
    if t_prev == 0:
        return x0_hat
    ab_prev = schedule.alpha_bar(t_prev)
    sigma = ddim_sigma(t, t_prev, eta, schedule)
    direction = math.sqrt(max(1.0 - ab_prev - sigma**2, 0.0))
    x_prev = math.sqrt(ab_prev) * x0_hat + direction * out.eps_hat
    if sigma > 0:
        if noise is None:
            raise ValueError("stochastic DDIM (eta > 0) needs a noise tensor")
        x_prev = x_prev + sigma * noise
    return x_prev


def per_item_normal(generators: Sequence[torch.Generator], like: torch.Tensor) -> torch.Tensor:
    """One standard-normal draw per batch item, each from its own stream."""
    return torch.stack(
        [
            torch.randn(like.shape[1:], generator=g, device=like.device, dtype=like.dtype)
            for g in generators
        ]
    )


@dataclass
class ChainTrace:
    steps: List[int] = field(default_factory=list)
    guidance_norms: List[float] = field(default_factory=list)


def _step_pairs(start: int, spec: GuidanceSpec) -> List[Tuple[int, int]]:
    if spec.sampler == SamplerKind.DDIM:
        ts = ddim_timesteps(start, spec.ddim_steps)
        return list(zip(ts[:-1], ts[1:]))
    return [(t, t - 1) for t in range(start, 0, -1)]


def run_chain(
    x: torch.Tensor,
    start: int,
    denoiser: nn.Module,
    schedule: NoiseSchedule,
    spec: GuidanceSpec,
    generators: Sequence[torch.Generator],
    classifier: Optional[nn.Module] = None,
) -> Tuple[torch.Tensor, ChainTrace]:
    """
    Run the reverse chain from `start` to 0, guided when a classifier is given and g > 0.

    With g = 0 the classifier is never called, so the result matches the unguided chain bitwise.
    """
    trace = ChainTrace()
    guided = classifier is not None and spec.gradient_scale > 0
    target = spec.target_class.index
    for t, t_prev in _step_pairs(start, spec):
        noisy = NoisyTriplet.from_state(x, t, spec.weights)
        out = denoiser_forward(denoiser, noisy)
        if guided:
            grad = classifier_input_gradient(classifier, noisy, target)
            out = DenoiserOutput(
                eps_hat=guided_eps(out.eps_hat, grad, t, spec.gradient_scale, schedule), v=out.v
            )
            trace.guidance_norms.append(float(grad.flatten(1).norm(dim=1).mean()))
        if spec.sampler == SamplerKind.DDIM:
            noise = per_item_normal(generators, x) if spec.eta > 0 and t_prev > 0 else None
            x = ddim_step(x, out, t, t_prev, spec.eta, schedule, noise, clip_x0=spec.clip_x0)
        else:
            noise = per_item_normal(generators, x) if t > 1 else torch.zeros_like(x)
            x = ddpm_step(x, out, t, noise, schedule, spec.variance_mode, clip_x0=spec.clip_x0)
        ensure_finite(x, "sampler state", t=t, t_prev=t_prev)
        trace.steps.append(t)
    logger.debug("reverse chain from %d ran %d steps (guided=%s)", start, len(trace.steps), guided)
    return x, trace
