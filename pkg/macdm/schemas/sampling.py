from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from macdm.diffusion.enums import SamplerKind, VarianceMode
from macdm.phantoms.enums import Label
from macdm.schemas.training import ChannelWeights

# Operating point reported for 256x256 inputs and T=1000; recorded for context only.
REFERENCE_GRADIENT_SCALE = 300.0
REFERENCE_START_STEP = 800
REFERENCE_TIMESTEPS = 1000


class GuidanceSpec(BaseModel):
    """Everything a guided translation or generation request needs besides the networks."""

    target_class: Label = Field(Label.CML, description="Class K to steer towards.")
    gradient_scale: float = Field(
        10.0, ge=0, description="Guidance scale g; 0 disables the classifier entirely."
    )
    start_step: Optional[int] = Field(
        None, ge=0, description="Intermediate step Z; defaults to round(start_fraction * T)."
    )
    start_fraction: float = Field(0.8, ge=0, le=1)
    ddim_steps: int = Field(50, ge=1)
    eta: float = Field(0.0, ge=0, le=1)
    weights: ChannelWeights = Field(default_factory=ChannelWeights)
    clip_x0: bool = True
    seed: int = 0
    sampler: SamplerKind = SamplerKind.DDIM
    variance_mode: VarianceMode = VarianceMode.LEARNED_RANGE
    allow_non_normal: bool = Field(
        False, description="Permit CML inputs to be translated (normal-only by default)."
    )

    def resolve_start_step(self, timesteps: int) -> int:
        if self.start_step is not None:
            return self.start_step
        return int(round(self.start_fraction * timesteps))
