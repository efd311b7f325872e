from __future__ import annotations

from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator


class NetworkConfig(BaseModel):
    """Architecture hyperparameters shared by the denoiser and the guidance classifier."""

    model_config = ConfigDict(frozen=True)

    image_size: int = Field(32, ge=16)
    in_channels: int = Field(3, ge=1)
    base_channels: int = Field(32, ge=8)
    channel_mults: Tuple[int, ...] = (1, 2, 2)
    blocks_per_level: int = Field(2, ge=1)
    dropout: float = Field(0.0, ge=0, lt=1)
    attention_heads: int = Field(4, ge=1)

    @field_validator("channel_mults")
    @classmethod
    def _fits_resolution(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v or any(m <= 0 for m in v):
            raise ValueError("channel_mults must be a non-empty tuple of positive ints")
        return v

    @property
    def levels(self) -> int:
        return len(self.channel_mults)
