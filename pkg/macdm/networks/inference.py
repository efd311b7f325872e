from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import torch
from torch import nn

from macdm.core.exceptions import NumericalError, ShapeMismatchError, TimestepError
from macdm.schemas.training import ChannelWeights


@dataclass
class NoisyTriplet:
    """
    Weighted model input I_t = concat(w1·x_t, w2·b_t, w3·c_t) with its timesteps.

    `stack` is (B, 3, H, W) and already weighted; `t` is a (B,) long tensor.
    """

    stack: torch.Tensor
    t: torch.Tensor

    def __post_init__(self) -> None:
        if self.stack.dim() != 4:
            raise ShapeMismatchError(f"expected (B, C, H, W), got {tuple(self.stack.shape)}")
        if self.t.dim() == 0:
            self.t = self.t.expand(self.stack.shape[0])
        if self.t.shape != (self.stack.shape[0],):
            raise ShapeMismatchError(
                f"timesteps {tuple(self.t.shape)} do not match batch {self.stack.shape[0]}"
            )

    @classmethod
    def from_state(
        cls, state: torch.Tensor, t: Union[int, torch.Tensor], weights: ChannelWeights
    ) -> "NoisyTriplet":
        """Weight an unweighted (x_t, b_t, c_t) state into a model input."""
        w = torch.tensor(weights.as_tuple(), dtype=state.dtype, device=state.device)
        if not isinstance(t, torch.Tensor):
            t = torch.full((state.shape[0],), int(t), dtype=torch.long, device=state.device)
        return cls(stack=state * w[None, :, None, None], t=t.long())

    @property
    def image_channel(self) -> torch.Tensor:
        return self.stack[:, 0]

    @property
    def bone_channel(self) -> torch.Tensor:
        return self.stack[:, 1]

    @property
    def lesion_channel(self) -> torch.Tensor:
        return self.stack[:, 2]


@dataclass
class DenoiserOutput:
    """Per-channel noise prediction and variance-interpolation fraction v in [0, 1]."""

    eps_hat: torch.Tensor
    v: torch.Tensor

    @classmethod
    def from_raw(cls, raw: torch.Tensor) -> "DenoiserOutput":
        eps_hat, v_logits = raw.chunk(2, dim=1)
        return cls(eps_hat=eps_hat, v=torch.sigmoid(v_logits))


def _check_input(model: nn.Module, noisy: NoisyTriplet) -> None:
    config = getattr(model, "config", None)
    if config is not None:
        _, c, h, w = noisy.stack.shape
        if c != config.in_channels or h != config.image_size or w != config.image_size:
            raise ShapeMismatchError(
                f"input {(c, h, w)} does not match model "
                f"{(config.in_channels, config.image_size, config.image_size)}"
            )
    timesteps: Optional[int] = getattr(model, "timesteps", None)
    lo, hi = int(noisy.t.min()), int(noisy.t.max())
    if lo < 1 or (timesteps is not None and hi > timesteps):
        raise TimestepError(f"timesteps [{lo}, {hi}] outside [1, {timesteps}]")


def denoiser_forward(model: nn.Module, noisy: NoisyTriplet) -> DenoiserOutput:
    _check_input(model, noisy)
    with torch.no_grad():
        return DenoiserOutput.from_raw(model(noisy.stack, noisy.t))


def classifier_forward(model: nn.Module, noisy: NoisyTriplet) -> torch.Tensor:
    """(B, 2) log-probabilities over (normal, CML)."""
    _check_input(model, noisy)
    with torch.no_grad():
        return model(noisy.stack, noisy.t)


def classifier_input_gradient(
    model: nn.Module, noisy: NoisyTriplet, y: Union[int, torch.Tensor]
) -> torch.Tensor:
    """∇_{I_t} log p_φ(y | I_t) for every item, same shape as the stack."""
    _check_input(model, noisy)
    if not isinstance(y, torch.Tensor):
        y = torch.full((noisy.stack.shape[0],), int(y), dtype=torch.long, device=noisy.stack.device)
    if bool(((y != 0) & (y != 1)).any()):
        raise ValueError("class index must be 0 or 1")
    with torch.enable_grad():
        x = noisy.stack.detach().requires_grad_(True)
        log_probs = model(x, noisy.t)
        selected = log_probs[torch.arange(x.shape[0], device=x.device), y.long()]
        (grad,) = torch.autograd.grad(selected.sum(), x)
    if not torch.isfinite(grad).all():
        raise NumericalError(
            "classifier gradient is not finite",
            {
                "timesteps": noisy.t.tolist(),
                "input_abs_max": float(noisy.stack.abs().max()),
                "log_probs": selected.detach().tolist(),
            },
        )
    return grad
