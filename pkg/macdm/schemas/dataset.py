from __future__ import annotations

from collections import Counter
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from macdm.phantoms.enums import Label, Provenance

MANIFEST_SCHEMA_VERSION = 1


class RecordEntry(BaseModel):
    """One dataset record; paths are relative to the dataset directory."""

    id: str = Field(min_length=1)
    label: Label
    provenance: Provenance
    image: str = Field(description="8-bit grayscale PNG, linear [0,1] -> [0,255].")
    bone: str = Field(description="Bone mask PNG with values {0,255}.")
    lesion: str = Field(description="Lesion mask PNG with values {0,255}.")
    float_image: Optional[str] = Field(None, description="Optional lossless .npy sidecar.")
    checksums: Dict[str, str] = Field(default_factory=dict, description="sha256 per file key.")
    fold: Optional[int] = Field(None, ge=0)
    source_id: Optional[str] = Field(
        None, description="For synthetic records: id of the real record that was translated."
    )


class DatasetManifest(BaseModel):
    """Versioned description of a dataset directory (manifest.json)."""

    schema_version: int = MANIFEST_SCHEMA_VERSION
    generator_version: str = "macdm-phantom/1"
    resolution: int = Field(ge=1)
    value_range: Tuple[float, float] = (0.0, 1.0)
    seed: Optional[int] = None
    num_folds: Optional[int] = Field(None, ge=2)
    records: List[RecordEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def _consistent(self) -> "DatasetManifest":
        dupes = [rid for rid, n in Counter(r.id for r in self.records).items() if n > 1]
        if dupes:
            raise ValueError(f"duplicate record ids: {dupes[:5]}")
        if self.num_folds is not None:
            bad = [r.id for r in self.records if r.fold is None or r.fold >= self.num_folds]
            if bad:
                raise ValueError(f"records without a valid fold: {bad[:5]}")
        return self

    @property
    def ids(self) -> List[str]:
        return [r.id for r in self.records]

    def label_counts(self) -> Dict[Label, int]:
        counts = Counter(r.label for r in self.records)
        return {label: counts.get(label, 0) for label in Label}


class PhantomConfig(BaseModel):
    """Corpus sizes for `phantom-gen` and the evaluation protocols."""

    size: int = Field(32, ge=16, description="Image side length in pixels.")
    n_normal: int = Field(200, ge=0)
    n_cml: int = Field(80, ge=0)
    folds: int = Field(5, ge=2)
    lossless: bool = Field(False, description="Also write float/<id>.npy sidecars.")
    independent_normal: int = Field(45, ge=0, description="Normal records in the shifted test corpus.")
    independent_cml: int = Field(8, ge=0, description="CML records in the shifted test corpus.")
