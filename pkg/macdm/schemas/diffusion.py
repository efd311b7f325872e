from __future__ import annotations

from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from macdm.diffusion.enums import ScheduleKind


class ScheduleConfig(BaseModel):
    """
    Noise schedule settings.

    For the linear kind, missing endpoints default to (1e-4, 0.02) scaled by 1000/T, so that a
    short desk-scale chain still ends close to pure noise.
    """

    model_config = ConfigDict(frozen=True)

    kind: ScheduleKind = ScheduleKind.LINEAR
    timesteps: int = Field(200, ge=1, description="Number of diffusion steps T.")
    beta_start: Optional[float] = Field(None, gt=0, lt=1)
    beta_end: Optional[float] = Field(None, gt=0, lt=1)

    @model_validator(mode="after")
    def _ordered(self) -> "ScheduleConfig":
        start, end = self.resolved_betas()
        if self.kind == ScheduleKind.LINEAR and not (0 < start <= end < 1):
            raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({start}, {end})")
        return self

    def resolved_betas(self) -> Tuple[float, float]:
        scale = 1000.0 / self.timesteps
        start = self.beta_start if self.beta_start is not None else min(scale * 1e-4, 0.999)
        end = self.beta_end if self.beta_end is not None else min(scale * 0.02, 0.999)
        return start, end
