from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Sequence

import torch
from torch import nn
from torch.nn import functional as F

from macdm.core.exceptions import InsufficientDataError
from macdm.core.hashing import config_hash
from macdm.core.seeding import derive_seed, torch_generator
from macdm.diffusion.gaussian import forward_marginal_sample
from macdm.diffusion.schedule import NoiseSchedule, schedule_from_config
from macdm.networks.classifier import NoisyInputClassifier
from macdm.networks.inference import NoisyTriplet, classifier_forward
from macdm.phantoms.triplet import Corpus
from macdm.schemas.checkpoint import CheckpointKind, CheckpointMeta
from macdm.schemas.diffusion import ScheduleConfig
from macdm.schemas.network import NetworkConfig
from macdm.schemas.training import ChannelWeights, TrainConfig

from .data import Batch, TripletDataset, batch_stream
from .denoiser import _check_resolution
from .loop import TrainingResult, run_loop

logger = logging.getLogger(__name__)

CLASSIFIER_COLUMNS = ("cross_entropy", "accuracy")


def train_classifier(
    corpus: Corpus,
    config: TrainConfig,
    schedule_config: ScheduleConfig,
    network: NetworkConfig,
    output_dir: Path,
    device: str = "cpu",
    progress: bool = False,
) -> TrainingResult:
    """
    Train the guidance classifier on weighted noisy stacks at uniformly drawn t.

    Uses the same channel weights as the denoiser so its input gradient lives in the same space.
    """
    dataset = TripletDataset(corpus.triplets)
    normal, cml = dataset.class_counts
    if normal == 0 or cml == 0:
        raise InsufficientDataError(
            f"guidance classifier needs both classes, got {normal} normal and {cml} CML"
        )
    _check_resolution(corpus, network)
    schedule = schedule_from_config(schedule_config)

    torch.manual_seed(derive_seed(config.seed, "classifier", "init"))
    model = NoisyInputClassifier(network, timesteps=schedule.timesteps).to(device)
    noise = torch_generator(derive_seed(config.seed, "classifier", "noise"), device)
    batches = batch_stream(dataset, config.batch_size, derive_seed(config.seed, "classifier", "order"))

    def step(batch: Batch):
        stacks, labels, _ = batch
        x0, labels = stacks.to(device), labels.to(device)
        t = torch.randint(1, schedule.timesteps + 1, (x0.shape[0],), generator=noise, device=device)
        eps = torch.randn(x0.shape, generator=noise, device=device)
        noisy = NoisyTriplet.from_state(forward_marginal_sample(x0, t, eps, schedule), t, config.weights)
        logits = model.logits(noisy.stack, noisy.t)
        loss = F.cross_entropy(logits, labels)
        accuracy = float((logits.argmax(dim=-1) == labels).float().mean())
        return loss, {"cross_entropy": float(loss), "accuracy": accuracy}

    meta = CheckpointMeta(
        kind=CheckpointKind.GUIDANCE_CLASSIFIER,
        network=network.model_dump(mode="json"),
        schedule=schedule_config,
        weights=config.weights,
        train_config_hash=config_hash(config.model_dump(mode="json")),
        seed=config.seed,
        extra={"normal_records": normal, "cml_records": cml},
    )
    logger.info(
        "training guidance classifier: %d normal / %d CML, %d iterations", normal, cml, config.iterations
    )
    return run_loop(
        model,
        step,
        batches,
        config,
        meta,
        Path(output_dir) / "classifier.pt",
        CLASSIFIER_COLUMNS,
        progress=progress,
    )


def evaluate_classifier_accuracy(
    model: nn.Module,
    corpus: Corpus,
    schedule: NoiseSchedule,
    weights: ChannelWeights,
    timesteps: Sequence[int],
    seed: int = 0,
    batch_size: int = 64,
) -> Dict[int, float]:
    """Accuracy of the guidance classifier on `corpus` noised to each fixed t."""
    dataset = TripletDataset(corpus.triplets)
    device = next(model.parameters()).device
    results: Dict[int, float] = {}
    for t in timesteps:
        schedule.check_timestep(t)
        gen = torch_generator(derive_seed(seed, "accuracy", t), device)
        correct = 0
        for start in range(0, len(dataset), batch_size):
            x0 = dataset.stacks[start : start + batch_size].to(device)
            labels = dataset.labels[start : start + batch_size].to(device)
            eps = torch.randn(x0.shape, generator=gen, device=device)
            tt = torch.full((x0.shape[0],), int(t), dtype=torch.long, device=device)
            noisy = NoisyTriplet.from_state(forward_marginal_sample(x0, tt, eps, schedule), tt, weights)
            correct += int((classifier_forward(model, noisy).argmax(dim=-1) == labels).sum())
        results[int(t)] = correct / len(dataset)
    return results
