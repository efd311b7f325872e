from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Optional, Sequence

from macdm.core.exceptions import CheckpointError
from macdm.core.files import atomic_write_text
from macdm.diffusion.schedule import schedule_from_config
from macdm.models import ArtifactKind
from macdm.networks.checkpoint import Checkpoint, load_network
from macdm.schemas.checkpoint import CheckpointKind
from macdm.training.classifier import evaluate_classifier_accuracy, train_classifier
from macdm.training.denoiser import train_denoiser

from .deps import CommandContext, add_common_output, output_dir, require_dataset

logger = logging.getLogger(__name__)

ACCURACY_NAME = "classifier_accuracy.json"


def _claim(out: Path, name: str, overwrite: bool) -> None:
    # Checkpoints are written file-atomically into `out`, so a diverged run keeps its last good one.
    if (out / name).exists() and not overwrite:
        raise CheckpointError(f"{out / name} already exists; pass --overwrite to replace it")
    out.mkdir(parents=True, exist_ok=True)


def _record_checkpoint(run, name: str, checkpoint: Checkpoint) -> None:
    run.add_output(name, ArtifactKind.CHECKPOINT, checkpoint.path)
    if checkpoint.meta.loss_history:
        run.add_output(f"{name}_loss", ArtifactKind.LOSS_CURVE, checkpoint.path.parent / checkpoint.meta.loss_history)


def run_train_diffusion(ctx: CommandContext, data: Path, out: Path, overwrite: bool = False) -> Checkpoint:
    s = ctx.settings
    _claim(out, "denoiser.pt", overwrite)
    with ctx.recorder("train-diffusion") as run:
        run.add_input("dataset", ArtifactKind.DATASET, data)
        run.add_seed("denoiser", s.denoiser.seed)
        corpus = require_dataset(data, "--data")
        result = train_denoiser(corpus, s.denoiser, s.diffusion, s.network, out, ctx.device, ctx.progress)
        _record_checkpoint(run, "denoiser", result.checkpoint)
        logger.info(
            "simple loss: first-100 mean %.4f, last-100 mean %.4f",
            result.history.head_mean("simple"),
            result.history.tail_mean("simple"),
        )
        run.finish(out)
    return result.checkpoint


def accuracy_timesteps(timesteps: int, count: int = 5) -> Sequence[int]:
    """Evenly spaced t in [1, T], both ends included."""
    if timesteps <= count:
        return list(range(1, timesteps + 1))
    return sorted({1 + round(i * (timesteps - 1) / (count - 1)) for i in range(count)})


def run_train_classifier(
    ctx: CommandContext,
    data: Path,
    out: Path,
    overwrite: bool = False,
    held_out: Optional[Path] = None,
) -> Checkpoint:
    """Train the guidance classifier; reports per-t accuracy on `held_out` (or the training data)."""
    s = ctx.settings
    _claim(out, "classifier.pt", overwrite)
    with ctx.recorder("train-guidance-classifier") as run:
        run.add_input("dataset", ArtifactKind.DATASET, data)
        run.add_seed("classifier", s.classifier.seed)
        corpus = require_dataset(data, "--data")
        result = train_classifier(corpus, s.classifier, s.diffusion, s.network, out, ctx.device, ctx.progress)
        _record_checkpoint(run, "classifier", result.checkpoint)

        scored = corpus
        if held_out is not None:
            run.add_input("held_out", ArtifactKind.DATASET, held_out)
            scored = require_dataset(held_out, "--held-out")
        model, _ = load_network(result.checkpoint.path, CheckpointKind.GUIDANCE_CLASSIFIER, ctx.device)
        schedule = schedule_from_config(s.diffusion)
        accuracy = evaluate_classifier_accuracy(
            model, scored, schedule, s.classifier.weights, accuracy_timesteps(schedule.timesteps), s.classifier.seed
        )
        for t, value in accuracy.items():
            logger.info("guidance classifier accuracy at t=%d: %.3f", t, value)
        atomic_write_text(out / ACCURACY_NAME, json.dumps({str(t): v for t, v in accuracy.items()}, indent=2))
        run.add_output("accuracy", ArtifactKind.REPORT, out / ACCURACY_NAME)
        run.finish(out)
    return result.checkpoint


def _train_diffusion(ctx: CommandContext, args: argparse.Namespace) -> int:
    out = output_dir(ctx, args, "denoiser")
    checkpoint = run_train_diffusion(ctx, args.data, out, args.overwrite)
    print(checkpoint.path)
    return 0


def _train_classifier(ctx: CommandContext, args: argparse.Namespace) -> int:
    out = output_dir(ctx, args, "classifier")
    checkpoint = run_train_classifier(ctx, args.data, out, args.overwrite, args.held_out)
    print(checkpoint.path)
    return 0


def _training_flags(p: argparse.ArgumentParser, section: str) -> None:
    add_common_output(p)
    p.add_argument("--data", type=Path, required=True, help="Phantom dataset directory.")
    p.add_argument("--iterations", dest=f"{section}.iterations", type=int, default=None)
    p.add_argument("--batch-size", dest=f"{section}.batch_size", type=int, default=None)
    p.add_argument("--lr", dest=f"{section}.learning_rate", type=float, default=None)
    p.add_argument("--timesteps", dest="diffusion.timesteps", type=int, default=None, help="T.")
    p.add_argument(
        "--no-masks", dest="weights", action="store_const", const={"w1": 1.0, "w2": 0.0, "w3": 0.0},
        default=None, help="Mask-free baseline: disable the bone and lesion channels.",
    )


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("train-diffusion", help="Train the mask-conditioned denoiser.")
    _training_flags(p, "denoiser")
    p.add_argument("--lambda-vlb", dest="denoiser.lambda_vlb", type=float, default=None)
    p.set_defaults(handler=_train_diffusion)

    p = subparsers.add_parser("train-guidance-classifier", help="Train the noisy-input guidance classifier.")
    _training_flags(p, "classifier")
    p.add_argument("--held-out", type=Path, default=None, help="Dataset for the per-t accuracy report.")
    p.set_defaults(handler=_train_classifier)
