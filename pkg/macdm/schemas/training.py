from __future__ import annotations

from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field


class ChannelWeights(BaseModel):
    """
    Scaling factors for the concatenated (image, bone, lesion) model input.

    A mask weight of 0 disables that channel entirely (the mask-free baseline).
    """

    model_config = ConfigDict(frozen=True)

    w1: float = Field(1.0, gt=0, le=1, description="Image channel weight.")
    w2: float = Field(0.8, ge=0, le=1, description="Bone mask channel weight.")
    w3: float = Field(0.8, ge=0, le=1, description="Lesion mask channel weight.")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.w1, self.w2, self.w3)

    @property
    def active(self) -> Tuple[bool, bool, bool]:
        return (self.w1 > 0, self.w2 > 0, self.w3 > 0)

    @property
    def mask_conditioning(self) -> bool:
        return self.w2 > 0 or self.w3 > 0

    @classmethod
    def mask_free(cls) -> "ChannelWeights":
        return cls(w1=1.0, w2=0.0, w3=0.0)


class TrainConfig(BaseModel):
    """Hyperparameters for one training loop (denoiser or guidance classifier)."""

    iterations: int = Field(3000, gt=0)
    batch_size: int = Field(8, gt=0)
    learning_rate: float = Field(1e-4, gt=0)
    lambda_vlb: float = Field(
        0.001, ge=0, description="Weight λ of the variational term in the hybrid loss."
    )
    weights: ChannelWeights = Field(default_factory=ChannelWeights)
    schedule_ref: Optional[str] = Field(
        None, description="Hash of the noise schedule the run was trained against."
    )
    seed: int = 0
    checkpoint_every: int = Field(500, gt=0)
    grad_clip: float = Field(1.0, gt=0, description="Gradient-norm clip used as a divergence guard.")
    ema_decay: Optional[float] = Field(None, gt=0, lt=1)
    log_every: int = Field(100, gt=0)

