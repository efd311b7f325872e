"""
Normal-to-{CML, normal} translation from an intermediate step, and full-chain generation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import nn
from tqdm import tqdm

from macdm.core.exceptions import CheckpointMismatchError, ConfigError, TimestepError
from macdm.core.seeding import derive_seed, torch_generator
from macdm.diffusion.gaussian import forward_marginal_sample
from macdm.diffusion.ranges import binarize_mask, to_unit_range
from macdm.diffusion.schedule import NoiseSchedule, schedule_from_config
from macdm.networks.checkpoint import check_compatible, load_network
from macdm.phantoms.enums import Label
from macdm.phantoms.triplet import LabeledTriplet
from macdm.schemas.checkpoint import CheckpointKind, CheckpointMeta
from macdm.schemas.sampling import GuidanceSpec

from .results import SampleResult, TrajectoryMetadata
from .samplers import per_item_normal, run_chain

logger = logging.getLogger(__name__)


@dataclass
class SamplingModels:
    """A denoiser, an optional guidance classifier and the schedule they were trained on."""

    denoiser: nn.Module
    denoiser_meta: CheckpointMeta
    schedule: NoiseSchedule
    classifier: Optional[nn.Module] = None
    classifier_meta: Optional[CheckpointMeta] = None

    def __post_init__(self) -> None:
        if self.classifier_meta is not None:
            check_compatible(self.denoiser_meta, self.classifier_meta)
        if getattr(self.denoiser, "timesteps", None) not in (None, self.schedule.timesteps):
            raise CheckpointMismatchError(
                f"denoiser trained for T={self.denoiser.timesteps}, schedule has T={self.schedule.timesteps}"
            )

    @classmethod
    def from_checkpoints(
        cls,
        denoiser_path: Path,
        classifier_path: Optional[Path] = None,
        device: str = "cpu",
    ) -> "SamplingModels":
        denoiser, d_meta = load_network(denoiser_path, CheckpointKind.DENOISER, device)
        classifier = c_meta = None
        if classifier_path is not None:
            classifier, c_meta = load_network(classifier_path, CheckpointKind.GUIDANCE_CLASSIFIER, device)
        if d_meta.schedule is None:
            raise CheckpointMismatchError(f"{denoiser_path} records no noise schedule")
        return cls(denoiser, d_meta, schedule_from_config(d_meta.schedule), classifier, c_meta)

    @property
    def device(self) -> torch.device:
        return next(self.denoiser.parameters()).device

    @property
    def resolution(self) -> int:
        return self.denoiser_meta.network_config().image_size

    def check_spec(self, spec: GuidanceSpec) -> None:
        if self.denoiser_meta.weights is not None and self.denoiser_meta.weights != spec.weights:
            raise CheckpointMismatchError(
                f"spec weights {spec.weights.as_tuple()} differ from the denoiser's "
                f"{self.denoiser_meta.weights.as_tuple()}"
            )
        if spec.gradient_scale > 0 and self.classifier is None:
            raise ConfigError("gradient_scale > 0 needs a guidance classifier")


def _to_result(
    final: torch.Tensor,
    target: Label,
    metadata: TrajectoryMetadata,
    carry_masks: Optional[LabeledTriplet] = None,
) -> SampleResult:
    image = to_unit_range(final[0]).clamp(0.0, 1.0).cpu().numpy().astype(np.float32)
    if carry_masks is not None:
        bone, lesion = carry_masks.bone_mask.copy(), carry_masks.lesion_mask.copy()
    elif metadata.masks_generated:
        bone = binarize_mask(final[1]).cpu().numpy().astype(np.uint8)
        lesion = binarize_mask(final[2]).cpu().numpy().astype(np.uint8)
    else:
        bone = np.zeros(image.shape, dtype=np.uint8)
        lesion = np.zeros(image.shape, dtype=np.uint8)
    return SampleResult(image, bone, lesion, target, metadata)


def translate_batch(
    inputs: Sequence[LabeledTriplet],
    models: SamplingModels,
    spec: GuidanceSpec,
    batch_size: int = 16,
    progress: bool = False,
) -> List[SampleResult]:
    """
    Translate each input from step Z back to 0 under guidance towards `spec.target_class`.

    Each record draws from its own stream seeded by (spec.seed, record id), so results do not
    depend on batching. Z = 0 returns the inputs untouched.
    """
    models.check_spec(spec)
    schedule = models.schedule
    start = spec.resolve_start_step(schedule.timesteps)
    if start > schedule.timesteps:
        raise TimestepError(f"start step Z={start} exceeds T={schedule.timesteps}")
    if not spec.allow_non_normal:
        offending = [t.id for t in inputs if t.label != Label.NORMAL]
        if offending:
            raise ConfigError(
                f"translation inputs must be normal (override with allow_non_normal): {offending[:5]}"
            )
    carry_masks = not spec.weights.mask_conditioning
    device = models.device

    results: List[SampleResult] = []
    chunks = range(0, len(inputs), batch_size)
    for begin in tqdm(chunks, desc="translate", disable=not progress):
        chunk = inputs[begin : begin + batch_size]
        seeds = [derive_seed(spec.seed, t.id) for t in chunk]
        if start == 0:
            for triplet, seed in zip(chunk, seeds):
                meta = TrajectoryMetadata(
                    source_id=triplet.id,
                    seed=seed,
                    target_class=spec.target_class,
                    start_step=0,
                    sampler=spec.sampler,
                    eta=spec.eta,
                    gradient_scale=spec.gradient_scale,
                )
                results.append(
                    SampleResult(
                        triplet.image.copy(),
                        triplet.bone_mask.copy(),
                        triplet.lesion_mask.copy(),
                        spec.target_class,
                        meta,
                    )
                )
            continue
        generators = [torch_generator(seed, device) for seed in seeds]
        x0 = torch.from_numpy(np.stack([t.model_stack() for t in chunk])).to(device)
        eps = per_item_normal(generators, x0)
        xz = forward_marginal_sample(x0, start, eps, schedule)
        final, trace = run_chain(
            xz, start, models.denoiser, schedule, spec, generators, models.classifier
        )
        for i, (triplet, seed) in enumerate(zip(chunk, seeds)):
            meta = TrajectoryMetadata(
                source_id=triplet.id,
                seed=seed,
                target_class=spec.target_class,
                start_step=start,
                steps=trace.steps,
                sampler=spec.sampler,
                eta=spec.eta,
                gradient_scale=spec.gradient_scale,
                guidance_norms=trace.guidance_norms,
                masks_generated=not carry_masks,
            )
            results.append(
                _to_result(final[i], spec.target_class, meta, triplet if carry_masks else None)
            )
    logger.info(
        "translated %d records from Z=%d towards %s (g=%s)",
        len(inputs),
        start,
        spec.target_class.value,
        spec.gradient_scale,
    )
    return results


def translate(triplet: LabeledTriplet, models: SamplingModels, spec: GuidanceSpec) -> SampleResult:
    return translate_batch([triplet], models, spec)[0]


def generate_unconditional(
    models: SamplingModels,
    spec: GuidanceSpec,
    count: int,
    batch_size: int = 16,
    progress: bool = False,
) -> List[SampleResult]:
    """
    Sample from pure noise through the full reverse chain (Z = T), guided when g > 0.

    Mask-free models produce empty masks.
    """
    models.check_spec(spec)
    schedule = models.schedule
    size = models.resolution
    device = models.device
    full = spec.model_copy(update={"start_step": schedule.timesteps})
    results: List[SampleResult] = []
    for begin in tqdm(range(0, count, batch_size), desc="generate", disable=not progress):
        indices = range(begin, min(begin + batch_size, count))
        seeds = [derive_seed(spec.seed, "uncond", i) for i in indices]
        generators = [torch_generator(seed, device) for seed in seeds]
        like = torch.empty((len(seeds), 3, size, size), device=device)
        x_t = per_item_normal(generators, like)
        final, trace = run_chain(
            x_t, schedule.timesteps, models.denoiser, schedule, full, generators, models.classifier
        )
        for i, seed in enumerate(seeds):
            meta = TrajectoryMetadata(
                seed=seed,
                target_class=spec.target_class,
                start_step=schedule.timesteps,
                steps=trace.steps,
                sampler=spec.sampler,
                eta=spec.eta,
                gradient_scale=spec.gradient_scale,
                guidance_norms=trace.guidance_norms,
                masks_generated=spec.weights.mask_conditioning,
            )
            results.append(_to_result(final[i], spec.target_class, meta))
    return results
