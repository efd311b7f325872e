from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from macdm.core.exceptions import ShapeMismatchError
from macdm.diffusion.enums import SamplerKind
from macdm.phantoms.enums import Label, Provenance
from macdm.phantoms.storage import save_dataset
from macdm.phantoms.triplet import Corpus, LabeledTriplet
from macdm.schemas.dataset import DatasetManifest

TRAJECTORY_SIDECAR = "trajectories.json"


class TrajectoryMetadata(BaseModel):
    """How one sample was produced; enough to replay it from the same checkpoints."""

    source_id: Optional[str] = None
    seed: int
    target_class: Label
    start_step: int
    steps: List[int] = Field(default_factory=list)
    sampler: SamplerKind
    eta: float
    gradient_scale: float
    guidance_norms: List[float] = Field(default_factory=list)
    masks_generated: bool = True


@dataclass(eq=False)
class SampleResult:
    """Image in [0, 1] with exactly binary masks."""

    image: np.ndarray
    bone_mask: np.ndarray
    lesion_mask: np.ndarray
    target_class: Label
    metadata: TrajectoryMetadata

    def __post_init__(self) -> None:
        if not (self.image.shape == self.bone_mask.shape == self.lesion_mask.shape):
            raise ShapeMismatchError("sample image and masks differ in shape")

    def to_triplet(self, record_id: str) -> LabeledTriplet:
        """
        Dataset record labelled with the target class.

        Normal-targeted samples drop any lesion pixels the chain produced.
        """
        lesion = self.lesion_mask
        if self.target_class == Label.NORMAL:
            lesion = np.zeros_like(lesion)
        return LabeledTriplet(
            id=record_id,
            image=np.clip(self.image, 0.0, 1.0),
            bone_mask=self.bone_mask,
            lesion_mask=lesion,
            label=self.target_class,
            provenance=Provenance.SYNTHETIC,
            source_id=self.metadata.source_id,
        )


def synthetic_id(result: SampleResult, index: int) -> str:
    source = result.metadata.source_id or "uncond"
    return f"syn-{result.target_class.value}-{source}-{index:04d}"


def results_to_corpus(results: Sequence[SampleResult], resolution: int) -> Corpus:
    triplets = [r.to_triplet(synthetic_id(r, i)) for i, r in enumerate(results)]
    return Corpus.from_triplets(triplets, resolution=resolution, generator_version="macdm-sampler/1")


def write_samples(
    results: Sequence[SampleResult],
    directory: Path,
    resolution: int,
    lossless: bool = False,
    overwrite: bool = False,
) -> DatasetManifest:
    """Dataset-format records plus a trajectories.json sidecar keyed by record id."""
    corpus = results_to_corpus(results, resolution)
    trajectories: Dict[str, dict] = {
        t.id: r.metadata.model_dump(mode="json") for t, r in zip(corpus.triplets, results)
    }
    payload = json.dumps(trajectories, indent=2, sort_keys=True).encode("utf-8")
    return save_dataset(
        corpus, directory, lossless=lossless, overwrite=overwrite, extra_files={TRAJECTORY_SIDECAR: payload}
    )
