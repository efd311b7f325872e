from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from macdm.networks.checkpoint import checkpoint_digest
from macdm.core.seeding import numpy_rng
from macdm.phantoms.triplet import Corpus, LabeledTriplet

from .downstream import PhantomResNet, extract_features, load_downstream
from .frechet import frechet_distance
from .reports import FidResult

logger = logging.getLogger(__name__)

Images = Union[Corpus, Sequence[LabeledTriplet], np.ndarray]


def _as_images(images: Images) -> np.ndarray:
    if isinstance(images, np.ndarray):
        return images.astype(np.float32)
    return np.stack([t.image for t in images]).astype(np.float32)


def noise_images(count: int, size: int, seed: int) -> np.ndarray:
    """Pure-noise images: a standard normal draw clipped to [-1, 1], mapped to [0, 1]."""
    draws = numpy_rng(seed).standard_normal((count, size, size))
    return ((np.clip(draws, -1.0, 1.0) + 1.0) / 2.0).astype(np.float32)


def fid_with_extractor(
    real: Images, synthetic: Images, extractor: PhantomResNet, extractor_sha256: str, label: str = ""
) -> FidResult:
    a, b = _as_images(real), _as_images(synthetic)
    value = frechet_distance(extract_features(extractor, a), extract_features(extractor, b))
    logger.info("FID %s: %.4f (%d vs %d images)", label or "-", value, len(a), len(b))
    return FidResult(label=label, value=value, extractor_sha256=extractor_sha256, n_a=len(a), n_b=len(b))


def fid_images(
    real: Images, synthetic: Images, extractor_checkpoint: Path, device: str = "cpu", label: str = ""
) -> FidResult:
    """Fréchet distance between penultimate features of a trained phantom classifier."""
    model, _ = load_downstream(extractor_checkpoint, device)
    return fid_with_extractor(real, synthetic, model, checkpoint_digest(Path(extractor_checkpoint)), label)
