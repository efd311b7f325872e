"""
Procedural long-bone phantoms with metaphyseal corner lesions.

A phantom is a vertical shaft that flares into a rounded distal metaphysis. CML phantoms carry one
or two low-intensity crescents at the metaphyseal corners whose area stays within a fixed fraction
of the bone area.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from macdm.core.exceptions import DatasetError
from macdm.core.seeding import derive_seed, numpy_rng

from .enums import Label, Provenance
from .triplet import Corpus, LabeledTriplet

logger = logging.getLogger(__name__)

GENERATOR_VERSION = "macdm-phantom/1"
MIN_LESION_FRACTION = 0.005
MAX_LESION_FRACTION = 0.05
MIN_SIZE = 16

Range = Tuple[float, float]


class PhantomStyle(BaseModel):
    """Sampling ranges for acquisition-like appearance; shifting them yields a distinct test corpus."""

    model_config = ConfigDict(frozen=True)

    background: Range = (0.12, 0.28)
    bone_intensity: Range = (0.60, 0.80)
    gradient: Range = (-0.08, 0.08)
    blur_sigma: Range = (0.4, 0.9)
    noise_sigma: Range = (0.01, 0.03)
    contrast: Range = (0.85, 1.15)
    gamma: Range = (0.8, 1.25)
    lesion_depth: Range = (0.55, 0.85)
    two_lesion_probability: float = Field(0.35, ge=0, le=1)

    @classmethod
    def shifted(cls) -> "PhantomStyle":
        """Darker, noisier and lower-contrast acquisitions for an independent test set."""
        return cls(
            background=(0.20, 0.36),
            bone_intensity=(0.52, 0.70),
            blur_sigma=(0.6, 1.2),
            noise_sigma=(0.03, 0.05),
            contrast=(0.70, 0.95),
            gamma=(1.0, 1.4),
        )


DEFAULT_STYLE = PhantomStyle()


@dataclass(frozen=True)
class _Anatomy:
    bone: np.ndarray
    corners: List[Tuple[float, float, int]]  # (row, col, outward column sign)


def _uniform(rng: np.random.Generator, bounds: Range) -> float:
    return float(rng.uniform(bounds[0], bounds[1]))


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _anatomy(rng: np.random.Generator, size: int) -> _Anatomy:
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    tilt = np.tan(np.deg2rad(rng.uniform(-8.0, 8.0)))
    cx0 = size / 2.0 + rng.uniform(-0.06, 0.06) * size
    half_shaft = rng.uniform(0.12, 0.17) * size
    flare = rng.uniform(0.08, 0.13) * size
    flare_start = rng.uniform(0.50, 0.60) * size
    flare_len = 0.22 * size
    end_row = rng.uniform(0.84, 0.90) * size
    corner_radius = max(1.5, rng.uniform(0.05, 0.08) * size)

    centre = cx0 + tilt * (rows - size / 2.0)
    half_width = half_shaft + flare * _smoothstep((rows - flare_start) / flare_len)
    offset = np.abs(cols - centre)

    # Rounded distal end: rows near the physis lose their outermost columns.
    overshoot = np.maximum(0.0, offset - (half_width - corner_radius))
    depth = np.sqrt(np.maximum(0.0, corner_radius**2 - overshoot**2))
    limit = end_row - corner_radius + depth
    bone = (offset <= half_width) & (rows <= limit)

    corner_row = end_row - corner_radius
    corner_half = half_shaft + flare * float(_smoothstep(np.array((corner_row - flare_start) / flare_len)))
    corner_centre = cx0 + tilt * (corner_row - size / 2.0)
    corners = [
        (corner_row, corner_centre - corner_half, -1),
        (corner_row, corner_centre + corner_half, +1),
    ]
    return _Anatomy(bone=bone, corners=corners)


def boundary_band(bone: np.ndarray, width: int) -> np.ndarray:
    """Pixels of `bone` within `width` pixels of its margin."""
    interior = ndimage.binary_erosion(bone, iterations=width, border_value=0)
    return bone & ~interior


def _band_width(size: int) -> int:
    return max(2, size // 10)


def _crescent(
    shape: Tuple[int, int], corner: Tuple[float, float, int], radius: float
) -> np.ndarray:
    rows, cols = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    row, col, side = corner
    # Outward direction points away from the shaft axis and towards the physis.
    out_r, out_c = 1.0 / np.sqrt(2.0), side / np.sqrt(2.0)
    cr, cc = row - 0.35 * radius * out_r, col - 0.35 * radius * out_c
    outer = (rows - cr) ** 2 + (cols - cc) ** 2 <= radius**2
    shift = 0.6 * radius
    inner = (rows - cr - shift * out_r) ** 2 + (cols - cc - shift * out_c) ** 2 <= radius**2
    return outer & ~inner


def _fit_lesion(
    rng: np.random.Generator,
    bone: np.ndarray,
    corners: List[Tuple[float, float, int]],
    size: int,
) -> np.ndarray:
    band = boundary_band(bone, _band_width(size))
    bone_area = int(bone.sum())
    target_total = rng.uniform(0.012, 0.04) * bone_area
    lesion = np.zeros_like(bone)
    for corner in corners:
        target = target_total / len(corners)
        best, best_gap = None, np.inf
        for radius in np.linspace(1.0, 0.3 * size, 48):
            candidate = _crescent(bone.shape, corner, radius) & band
            gap = abs(int(candidate.sum()) - target)
            if gap < best_gap:
                best, best_gap = candidate, gap
        lesion |= best
    return _enforce_area(lesion, band, bone_area, corners)


def _enforce_area(
    lesion: np.ndarray,
    band: np.ndarray,
    bone_area: int,
    corners: List[Tuple[float, float, int]],
) -> np.ndarray:
    lo = int(np.ceil(MIN_LESION_FRACTION * bone_area))
    hi = int(np.floor(MAX_LESION_FRACTION * bone_area))
    rows, cols = np.mgrid[0 : band.shape[0], 0 : band.shape[1]].astype(np.float64)
    nearest = np.min(
        np.stack([np.hypot(rows - r, cols - c) for r, c, _ in corners]), axis=0
    )
    lesion = lesion.copy()
    count = int(lesion.sum())
    if count > hi:
        # Drop the pixels farthest from any corner.
        idx = np.flatnonzero(lesion)
        order = idx[np.argsort(-nearest.ravel()[idx], kind="stable")]
        lesion.ravel()[order[: count - hi]] = False
    elif count < lo:
        candidates = np.flatnonzero(band & ~lesion)
        order = candidates[np.argsort(nearest.ravel()[candidates], kind="stable")]
        lesion.ravel()[order[: lo - count]] = True
    return lesion


def _render(
    rng: np.random.Generator,
    bone: np.ndarray,
    lesion: np.ndarray,
    style: PhantomStyle,
) -> np.ndarray:
    size = bone.shape[0]
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    background = _uniform(rng, style.background)
    image = background + _uniform(rng, style.gradient) * rows + _uniform(rng, style.gradient) * cols

    bone_level = _uniform(rng, style.bone_intensity)
    texture = ndimage.gaussian_filter(rng.normal(0.0, 1.0, bone.shape), sigma=1.5)
    texture *= 0.05 / max(float(np.abs(texture).max()), 1e-8)
    cortex = boundary_band(bone, 1)
    image = np.where(bone, bone_level + texture, image)
    image = np.where(cortex, image + 0.08, image)

    depth = _uniform(rng, style.lesion_depth)
    image = np.where(lesion, image - depth * (bone_level - background), image)

    image = ndimage.gaussian_filter(image, sigma=_uniform(rng, style.blur_sigma))
    image = np.clip(image, 0.0, 1.0) ** _uniform(rng, style.gamma)
    image = 0.5 + _uniform(rng, style.contrast) * (image - 0.5)
    image = image + rng.normal(0.0, _uniform(rng, style.noise_sigma), image.shape)
    return np.clip(image, 0.0, 1.0)


def generate_phantom(
    seed: int,
    label: Label,
    size: int,
    record_id: Optional[str] = None,
    style: PhantomStyle = DEFAULT_STYLE,
) -> LabeledTriplet:
    """
    Deterministic in `seed`: the same arguments always produce identical arrays.

    CML phantoms satisfy lesion ⊆ boundary band of the bone and 0.5%-5% lesion/bone area.
    """
    if size < MIN_SIZE:
        raise DatasetError(f"phantom size must be at least {MIN_SIZE}, got {size}")
    label = Label(label)
    rng = numpy_rng(seed)
    anatomy = _anatomy(rng, size)
    if label == Label.CML:
        corners = list(anatomy.corners)
        if rng.uniform() >= style.two_lesion_probability:
            corners = [corners[int(rng.integers(0, 2))]]
        lesion = _fit_lesion(rng, anatomy.bone, corners, size)
    else:
        lesion = np.zeros_like(anatomy.bone)
    image = _render(rng, anatomy.bone, lesion, style)
    return LabeledTriplet(
        id=record_id or f"{label.value}-seed{seed}",
        image=image.astype(np.float32),
        bone_mask=anatomy.bone,
        lesion_mask=lesion,
        label=label,
        provenance=Provenance.PHANTOM,
    )


def generate_corpus(
    n_normal: int,
    n_cml: int,
    size: int,
    seed: int,
    style: PhantomStyle = DEFAULT_STYLE,
    prefix: str = "",
) -> Corpus:
    """Ids are `<prefix><label>-NNNN`; each record is seeded from (seed, id)."""
    if n_normal < 0 or n_cml < 0:
        raise DatasetError("record counts must be non-negative")
    triplets: List[LabeledTriplet] = []
    for label, count in ((Label.NORMAL, n_normal), (Label.CML, n_cml)):
        for i in range(count):
            record_id = f"{prefix}{label.value}-{i:04d}"
            triplets.append(
                generate_phantom(derive_seed(seed, record_id), label, size, record_id, style)
            )
    logger.info("generated %d normal and %d CML phantoms at %dx%d", n_normal, n_cml, size, size)
    return Corpus.from_triplets(triplets, resolution=size, seed=seed, generator_version=GENERATOR_VERSION)
