from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from macdm.core.exceptions import InsufficientDataError
from macdm.core.seeding import derive_seed, torch_generator
from macdm.networks.blocks import Downsample, ResBlock, Upsample
from macdm.phantoms.enums import Label
from macdm.phantoms.triplet import Corpus, LabeledTriplet
from macdm.schemas.checkpoint import CheckpointKind
from macdm.schemas.training import TrainConfig
from macdm.training.data import Batch, TripletDataset, batch_stream
from macdm.training.loop import run_loop

from .downstream import _meta, image_batch
from .metrics import DiceSummary, dice

logger = logging.getLogger(__name__)

SEGMENTER_WIDTHS = (16, 32, 64)


class LesionUNet(nn.Module):
    """Encoder-decoder with skip connections predicting per-pixel lesion logits."""

    def __init__(self, widths: Sequence[int] = SEGMENTER_WIDTHS) -> None:
        super().__init__()
        self.widths = tuple(widths)
        self.stem = nn.Conv2d(1, self.widths[0], 3, padding=1)
        self.encoders = nn.ModuleList()
        self.downs = nn.ModuleList()
        current = self.widths[0]
        for i, width in enumerate(self.widths):
            self.encoders.append(ResBlock(current, width))
            current = width
            if i != len(self.widths) - 1:
                self.downs.append(Downsample(current))
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for width in reversed(self.widths[:-1]):
            self.ups.append(Upsample(current))
            self.decoders.append(ResBlock(current + width, width))
            current = width
        self.out = nn.Conv2d(current, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.stem(x)
        skips = []
        for i, encoder in enumerate(self.encoders):
            h = encoder(h)
            if i < len(self.downs):
                skips.append(h)
                h = self.downs[i](h)
        for up, decoder in zip(self.ups, self.decoders):
            h = decoder(torch.cat([up(h), skips.pop()], dim=1))
        return self.out(h)


def soft_dice_loss(logits: torch.Tensor, target: torch.Tensor, smooth: float = 1.0) -> torch.Tensor:
    prob = torch.sigmoid(logits).flatten(1)
    target = target.flatten(1)
    overlap = (prob * target).sum(dim=1)
    return (1.0 - (2.0 * overlap + smooth) / (prob.sum(dim=1) + target.sum(dim=1) + smooth)).mean()


def train_segmenter(
    train: Corpus, config: TrainConfig, device: str = "cpu", progress: bool = False
) -> LesionUNet:
    """Fit the lesion segmenter with BCE + soft Dice on the image channel."""
    if not any(t.lesion_mask.any() for t in train):
        raise InsufficientDataError("segmenter training set has no lesion pixels")
    torch.manual_seed(derive_seed(config.seed, "segmenter", "init"))
    model = LesionUNet().to(device)
    dataset = TripletDataset(train.triplets)
    batches = batch_stream(dataset, config.batch_size, derive_seed(config.seed, "segmenter", "order"))
    flips = torch_generator(derive_seed(config.seed, "segmenter", "flip"), device)

    def step(batch: Batch):
        stacks, _, _ = batch
        stacks = stacks.to(device)
        flip = torch.rand(stacks.shape[0], generator=flips, device=device) < 0.5
        stacks = torch.where(flip[:, None, None, None], stacks.flip(-1), stacks)
        x = stacks[:, :1]
        target = (stacks[:, 2:3] > 0).float()
        logits = model(x)
        bce = F.binary_cross_entropy_with_logits(logits, target)
        soft = soft_dice_loss(logits, target)
        return bce + soft, {"bce": float(bce), "soft_dice": float(soft)}

    meta = _meta(config, SEGMENTER_WIDTHS, CheckpointKind.SEGMENTER, {"records": len(train)})
    run_loop(model, step, batches, config, meta, None, ("bce", "soft_dice"), progress)
    return model


def predict_masks(model: LesionUNet, triplets: Sequence[LabeledTriplet], batch_size: int = 64) -> np.ndarray:
    device = next(model.parameters()).device
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(triplets), batch_size):
            chunk = np.stack([t.image for t in triplets[start : start + batch_size]])
            logits = model(image_batch(chunk).to(device))
            out.append((logits[:, 0] > 0).cpu().numpy().astype(np.uint8))
    return np.concatenate(out)


def evaluate_segmenter(model: LesionUNet, test: Corpus) -> DiceSummary:
    """Dice over the CML records of `test` (those with a lesion to find)."""
    lesioned = [t for t in test if t.label == Label.CML and t.lesion_mask.any()]
    if not lesioned:
        raise InsufficientDataError("segmentation test set has no lesion-bearing records")
    predictions = predict_masks(model, lesioned)
    return DiceSummary([dice(p, t.lesion_mask) for p, t in zip(predictions, lesioned)])


def train_eval_segmenter(
    train: Corpus, test: Corpus, config: TrainConfig, device: str = "cpu"
) -> DiceSummary:
    model = train_segmenter(train, config, device)
    summary = evaluate_segmenter(model, test)
    logger.info(
        "segmenter on %d lesions: dice %.3f ± %.3f", len(summary.scores), summary.mean, summary.std
    )
    return summary
