from __future__ import annotations

from typing import List

from pydantic import BaseModel, Field


class EvaluationConfig(BaseModel):
    """Knobs for the comparison protocols, the guidance sweep and FID."""

    seeds: int = Field(5, ge=1, description="Repetitions for the augmentation trend checks.")
    scarce_normal: int = Field(80, ge=1)
    scarce_cml: int = Field(20, ge=1)
    segmentation_test_fraction: float = Field(0.2, gt=0, lt=1)
    fid_samples: int = Field(200, ge=2)
    sweep_scales: List[float] = Field(default_factory=lambda: [0.0, 2.0, 5.0, 10.0, 20.0])
    sweep_sources: int = Field(24, ge=1, description="Normal records translated per sweep point.")
    fid_tolerance: float = Field(0.2, ge=0)
