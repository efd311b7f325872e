from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Iterator, List, Optional, Sequence

import numpy as np

from macdm.core.exceptions import DatasetError
from macdm.diffusion.ranges import to_model_range
from macdm.schemas.dataset import DatasetManifest, RecordEntry

from .enums import Label, Provenance


@dataclass(eq=False)
class LabeledTriplet:
    """
    Image in [0, 1] with its bone and lesion masks and class label.

    Normal records never carry lesion pixels; construction fails otherwise.
    """

    id: str
    image: np.ndarray
    bone_mask: np.ndarray
    lesion_mask: np.ndarray
    label: Label
    provenance: Provenance = Provenance.PHANTOM
    source_id: Optional[str] = None

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image, dtype=np.float32)
        self.bone_mask = np.asarray(self.bone_mask).astype(np.uint8)
        self.lesion_mask = np.asarray(self.lesion_mask).astype(np.uint8)
        if self.image.ndim != 2:
            raise DatasetError(f"image must be 2-D, got shape {self.image.shape}", self.id)
        if not (self.image.shape == self.bone_mask.shape == self.lesion_mask.shape):
            raise DatasetError("image and masks differ in shape", self.id)
        if not np.isfinite(self.image).all():
            raise DatasetError("image has non-finite pixels", self.id)
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise DatasetError("image outside [0, 1]", self.id)
        for name, mask in (("bone", self.bone_mask), ("lesion", self.lesion_mask)):
            if mask.size and mask.max() > 1:
                raise DatasetError(f"{name} mask is not binary", self.id)
        if self.label == Label.NORMAL and self.lesion_mask.any():
            raise DatasetError("normal record carries lesion pixels", self.id)

    @property
    def size(self) -> int:
        return self.image.shape[0]

    def lesion_fraction(self) -> float:
        bone = int(self.bone_mask.sum())
        return float(self.lesion_mask.sum()) / bone if bone else 0.0

    def model_stack(self) -> np.ndarray:
        """(3, H, W) float32 stack in [-1, 1]: image, bone mask, lesion mask."""
        return np.stack(
            [
                to_model_range(self.image),
                to_model_range(self.bone_mask.astype(np.float32)),
                to_model_range(self.lesion_mask.astype(np.float32)),
            ]
        ).astype(np.float32)

    def with_id(self, new_id: str, **changes) -> "LabeledTriplet":
        return replace(self, id=new_id, **changes)


@dataclass
class Corpus:
    """In-memory dataset: manifest plus decoded records, in manifest order."""

    manifest: DatasetManifest
    triplets: List[LabeledTriplet] = field(default_factory=list)

    def __post_init__(self) -> None:
        if [t.id for t in self.triplets] != self.manifest.ids:
            raise DatasetError("manifest and records disagree on ids or order")

    def __len__(self) -> int:
        return len(self.triplets)

    def __iter__(self) -> Iterator[LabeledTriplet]:
        return iter(self.triplets)

    @property
    def by_id(self) -> Dict[str, LabeledTriplet]:
        return {t.id: t for t in self.triplets}

    def entry(self, record_id: str) -> RecordEntry:
        for entry in self.manifest.records:
            if entry.id == record_id:
                return entry
        raise KeyError(record_id)

    def labels(self) -> np.ndarray:
        return np.array([t.label.index for t in self.triplets], dtype=np.int64)

    def of_label(self, label: Label) -> List[LabeledTriplet]:
        return [t for t in self.triplets if t.label == label]

    def subset(self, ids: Iterable[str]) -> "Corpus":
        wanted = set(ids)
        entries = [e for e in self.manifest.records if e.id in wanted]
        manifest = self.manifest.model_copy(update={"records": entries, "num_folds": None})
        manifest = manifest.model_copy(
            update={"records": [e.model_copy(update={"fold": None}) for e in entries]}
        )
        return Corpus(manifest, [t for t in self.triplets if t.id in wanted])

    @classmethod
    def from_triplets(
        cls,
        triplets: Sequence[LabeledTriplet],
        resolution: Optional[int] = None,
        seed: Optional[int] = None,
        generator_version: str = "macdm-phantom/1",
    ) -> "Corpus":
        resolution = resolution or (triplets[0].size if triplets else 1)
        manifest = DatasetManifest(
            resolution=resolution,
            seed=seed,
            generator_version=generator_version,
            records=[entry_for(t) for t in triplets],
        )
        return cls(manifest, list(triplets))

    def merged_with(self, other: "Corpus") -> "Corpus":
        """Concatenate two corpora of equal resolution (e.g. real + augmented)."""
        if self.manifest.resolution != other.manifest.resolution:
            raise DatasetError(
                f"cannot merge resolutions {self.manifest.resolution} and {other.manifest.resolution}"
            )
        records = [e.model_copy(update={"fold": None}) for e in self.manifest.records + other.manifest.records]
        manifest = self.manifest.model_copy(update={"records": records, "num_folds": None})
        return Corpus(manifest, self.triplets + other.triplets)


def entry_for(triplet: LabeledTriplet) -> RecordEntry:
    return RecordEntry(
        id=triplet.id,
        label=triplet.label,
        provenance=triplet.provenance,
        image=f"images/{triplet.id}.png",
        bone=f"bone/{triplet.id}.png",
        lesion=f"lesion/{triplet.id}.png",
        source_id=triplet.source_id,
    )
