"""
Denoiser objectives over the weighted (image, bone, lesion) stack.

Batches arrive as unweighted model-range stacks (B, 3, H, W). Each channel is noised with its own
standard normal draw; the network sees the weighted noisy stack. Channels whose weight is zero are
left out of every average, so a mask-free configuration reduces to the single-channel objective on
the image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
from torch import nn

from macdm.core.exceptions import NumericalError, ShapeMismatchError
from macdm.diffusion.enums import VarianceMode
from macdm.diffusion.gaussian import forward_marginal_sample, posterior_moments, reverse_moments
from macdm.diffusion.schedule import NoiseSchedule
from macdm.networks.inference import DenoiserOutput, NoisyTriplet
from macdm.schemas.training import ChannelWeights

LOG_FLOOR = 1e-12
# Half-width of one 8-bit intensity bin in [-1, 1] units.
BIN_HALF_WIDTH = 1.0 / 255.0


@dataclass
class LossTerms:
    simple: torch.Tensor
    vlb: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> Tuple[float, float, float]:
        return float(self.simple), float(self.vlb), float(self.total)


def _active(weights: ChannelWeights, like: torch.Tensor) -> torch.Tensor:
    return torch.tensor([w > 0 for w in weights.as_tuple()], device=like.device)


def _check_finite(value: torch.Tensor, what: str, t: torch.Tensor, ids: Optional[Sequence[str]]) -> None:
    if not torch.isfinite(value).all():
        diagnostics = {"timesteps": t.tolist()}
        if ids is not None:
            diagnostics["records"] = list(ids)
        raise NumericalError(f"{what} is not finite", diagnostics)


def normal_kl(
    mean1: torch.Tensor, logvar1: torch.Tensor, mean2: torch.Tensor, logvar2: torch.Tensor
) -> torch.Tensor:
    """Elementwise KL(N(mean1, e^logvar1) ‖ N(mean2, e^logvar2)) in nats."""
    return 0.5 * (
        -1.0 + logvar2 - logvar1 + torch.exp(logvar1 - logvar2) + (mean1 - mean2) ** 2 * torch.exp(-logvar2)
    )


def approx_standard_normal_cdf(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * (1.0 + torch.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * torch.pow(x, 3))))


def discretized_gaussian_log_likelihood(
    x: torch.Tensor, mean: torch.Tensor, log_scale: torch.Tensor
) -> torch.Tensor:
    """
    Log-probability of x in [-1, 1] under a Gaussian discretised into 8-bit bins.

    The outermost bins absorb the tails so the probabilities over all bins sum to one.
    """
    if not (x.shape == mean.shape == log_scale.shape):
        raise ShapeMismatchError("x, mean and log_scale must share a shape")
    centred = x - mean
    inv_std = torch.exp(-log_scale)
    cdf_plus = approx_standard_normal_cdf(inv_std * (centred + BIN_HALF_WIDTH))
    cdf_min = approx_standard_normal_cdf(inv_std * (centred - BIN_HALF_WIDTH))
    log_cdf_plus = torch.log(cdf_plus.clamp(min=LOG_FLOOR))
    log_one_minus_cdf_min = torch.log((1.0 - cdf_min).clamp(min=LOG_FLOOR))
    log_delta = torch.log((cdf_plus - cdf_min).clamp(min=LOG_FLOOR))
    return torch.where(
        x < -0.999, log_cdf_plus, torch.where(x > 0.999, log_one_minus_cdf_min, log_delta)
    )


def noise_batch(
    model: nn.Module,
    x0: torch.Tensor,
    t: torch.Tensor,
    eps: torch.Tensor,
    schedule: NoiseSchedule,
    weights: ChannelWeights,
) -> Tuple[torch.Tensor, DenoiserOutput]:
    """Forward-noise every channel to t, weight, and run the network with gradients."""
    xt = forward_marginal_sample(x0, t, eps, schedule)
    noisy = NoisyTriplet.from_state(xt, t, weights)
    return xt, DenoiserOutput.from_raw(model(noisy.stack, noisy.t))


def _masked_mean(per_elem: torch.Tensor, active: torch.Tensor) -> torch.Tensor:
    """Mean over active channels and pixels, per item: (B, C, H, W) -> (B,)."""
    return per_elem[:, active].flatten(1).mean(dim=1)


def simple_from_output(
    out: DenoiserOutput, eps: torch.Tensor, weights: ChannelWeights
) -> torch.Tensor:
    return _masked_mean((out.eps_hat - eps) ** 2, _active(weights, eps)).mean()


def vlb_from_output(
    out: DenoiserOutput,
    x0: torch.Tensor,
    xt: torch.Tensor,
    t: torch.Tensor,
    schedule: NoiseSchedule,
    weights: ChannelWeights,
) -> torch.Tensor:
    """
    KL between the true posterior and the model's reverse step, or the decoder NLL at t = 1.

    The noise prediction is detached so this term only trains the variance output.
    """
    active = _active(weights, x0)
    true_mean, _ = posterior_moments(x0, xt, t, schedule)
    true_log_var = schedule.gather(schedule.posterior_log_variance_clipped, t, xt)
    model = reverse_moments(
        xt, t, out.eps_hat.detach(), schedule, v=out.v, variance_mode=VarianceMode.LEARNED_RANGE
    )
    kl = _masked_mean(normal_kl(true_mean, true_log_var, model.mean, model.log_variance), active)
    nll = -discretized_gaussian_log_likelihood(x0, model.mean, 0.5 * model.log_variance)
    decoder = _masked_mean(nll, active)
    return torch.where(t == 1, decoder, kl).mean()


def simple_loss(
    model: nn.Module,
    x0: torch.Tensor,
    t: torch.Tensor,
    eps: torch.Tensor,
    schedule: NoiseSchedule,
    weights: ChannelWeights,
    ids: Optional[Sequence[str]] = None,
) -> torch.Tensor:
    """Mean squared error between the drawn noise and the network's prediction."""
    if x0.shape[0] == 0:
        raise ShapeMismatchError("empty batch")
    _, out = noise_batch(model, x0, t, eps, schedule, weights)
    loss = simple_from_output(out, eps, weights)
    _check_finite(loss, "simple loss", t, ids)
    return loss


def vlb_term(
    model: nn.Module,
    x0: torch.Tensor,
    t: torch.Tensor,
    eps: torch.Tensor,
    schedule: NoiseSchedule,
    weights: ChannelWeights,
    ids: Optional[Sequence[str]] = None,
) -> torch.Tensor:
    if x0.shape[0] == 0:
        raise ShapeMismatchError("empty batch")
    xt, out = noise_batch(model, x0, t, eps, schedule, weights)
    loss = vlb_from_output(out, x0, xt, t, schedule, weights)
    _check_finite(loss, "variational bound term", t, ids)
    return loss


def hybrid_loss(
    model: nn.Module,
    x0: torch.Tensor,
    t: torch.Tensor,
    eps: torch.Tensor,
    schedule: NoiseSchedule,
    weights: ChannelWeights,
    lambda_vlb: float,
    ids: Optional[Sequence[str]] = None,
) -> LossTerms:
    """simple + λ·vlb from a single forward pass."""
    if x0.shape[0] == 0:
        raise ShapeMismatchError("empty batch")
    xt, out = noise_batch(model, x0, t, eps, schedule, weights)
    simple = simple_from_output(out, eps, weights)
    _check_finite(simple, "simple loss", t, ids)
    if lambda_vlb == 0:
        return LossTerms(simple=simple, vlb=torch.zeros_like(simple), total=simple)
    vlb = vlb_from_output(out, x0, xt, t, schedule, weights)
    _check_finite(vlb, "variational bound term", t, ids)
    return LossTerms(simple=simple, vlb=vlb, total=simple + lambda_vlb * vlb)
