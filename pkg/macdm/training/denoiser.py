from __future__ import annotations

import logging
from pathlib import Path

import torch

from macdm.core.exceptions import ConfigError, InsufficientDataError
from macdm.core.hashing import config_hash
from macdm.core.seeding import derive_seed, torch_generator
from macdm.diffusion.schedule import schedule_from_config
from macdm.networks.denoiser import MaskConditionedUNet
from macdm.phantoms.triplet import Corpus
from macdm.schemas.checkpoint import CheckpointKind, CheckpointMeta
from macdm.schemas.diffusion import ScheduleConfig
from macdm.schemas.network import NetworkConfig
from macdm.schemas.training import TrainConfig

from .data import Batch, TripletDataset, batch_stream
from .losses import hybrid_loss
from .loop import TrainingResult, run_loop

logger = logging.getLogger(__name__)

DENOISER_COLUMNS = ("simple", "vlb", "total")


def _check_resolution(corpus: Corpus, network: NetworkConfig) -> None:
    if corpus.manifest.resolution != network.image_size:
        raise ConfigError(
            f"dataset resolution {corpus.manifest.resolution} differs from network image_size "
            f"{network.image_size}"
        )


def train_denoiser(
    corpus: Corpus,
    config: TrainConfig,
    schedule_config: ScheduleConfig,
    network: NetworkConfig,
    output_dir: Path,
    device: str = "cpu",
    progress: bool = False,
) -> TrainingResult:
    """Train the mask-conditioned denoiser on the hybrid objective; writes denoiser.pt."""
    if len(corpus) == 0:
        raise InsufficientDataError("denoiser training needs at least one record")
    _check_resolution(corpus, network)
    schedule = schedule_from_config(schedule_config)
    if config.schedule_ref is not None and config.schedule_ref != schedule.fingerprint():
        raise ConfigError(
            f"schedule_ref {config.schedule_ref} does not match schedule {schedule.fingerprint()}"
        )

    torch.manual_seed(derive_seed(config.seed, "denoiser", "init"))
    model = MaskConditionedUNet(network, timesteps=schedule.timesteps).to(device)
    noise = torch_generator(derive_seed(config.seed, "denoiser", "noise"), device)
    dataset = TripletDataset(corpus.triplets)
    batches = batch_stream(dataset, config.batch_size, derive_seed(config.seed, "denoiser", "order"))

    def step(batch: Batch):
        stacks, _, ids = batch
        x0 = stacks.to(device)
        t = torch.randint(1, schedule.timesteps + 1, (x0.shape[0],), generator=noise, device=device)
        eps = torch.randn(x0.shape, generator=noise, device=device)
        terms = hybrid_loss(model, x0, t, eps, schedule, config.weights, config.lambda_vlb, ids)
        simple, vlb, total = terms.as_floats()
        return terms.total, {"simple": simple, "vlb": vlb, "total": total}

    meta = CheckpointMeta(
        kind=CheckpointKind.DENOISER,
        network=network.model_dump(mode="json"),
        schedule=schedule_config,
        weights=config.weights,
        train_config_hash=config_hash(config.model_dump(mode="json")),
        seed=config.seed,
        extra={"dataset_records": len(corpus), "schedule_fingerprint": schedule.fingerprint()},
    )
    logger.info(
        "training denoiser: %d records, T=%d, %d iterations, weights=%s",
        len(corpus),
        schedule.timesteps,
        config.iterations,
        config.weights.as_tuple(),
    )
    return run_loop(
        model,
        step,
        batches,
        config,
        meta,
        Path(output_dir) / "denoiser.pt",
        DENOISER_COLUMNS,
        progress=progress,
    )
