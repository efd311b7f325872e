from __future__ import annotations

from enum import Enum
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field

from macdm.schemas.diffusion import ScheduleConfig
from macdm.schemas.network import NetworkConfig
from macdm.schemas.training import ChannelWeights

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointKind(str, Enum):
    DENOISER = "denoiser"
    GUIDANCE_CLASSIFIER = "guidance_classifier"
    DOWNSTREAM_CLASSIFIER = "downstream_classifier"
    SEGMENTER = "segmenter"


class CheckpointMeta(BaseModel):
    """Sidecar JSON written next to every parameter blob."""

    format_version: int = CHECKPOINT_FORMAT_VERSION
    kind: CheckpointKind
    network: Dict[str, Any] = Field(
        default_factory=dict, description="Architecture hyperparameters needed to rebuild."
    )
    schedule: Optional[ScheduleConfig] = None
    weights: Optional[ChannelWeights] = None
    train_config_hash: Optional[str] = None
    seed: Optional[int] = None
    iterations_completed: int = 0
    loss_history: Optional[str] = Field(None, description="Loss-curve CSV next to the blob.")
    extra: Dict[str, Any] = Field(default_factory=dict)

    def network_config(self) -> NetworkConfig:
        return NetworkConfig.model_validate(self.network)
