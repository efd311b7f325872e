"""
Downstream phantom classifier: a small residual network on the image channel.

It serves two purposes: the classification protocol trains one per fold and condition, and its
penultimate features are the embedding for desk-scale Fréchet distances.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from macdm.core.exceptions import CheckpointError, InsufficientDataError
from macdm.core.hashing import config_hash
from macdm.core.seeding import derive_seed, torch_generator
from macdm.diffusion.ranges import to_model_range
from macdm.networks.blocks import Downsample, ResBlock
from macdm.networks.checkpoint import Checkpoint, load_state
from macdm.phantoms.triplet import Corpus, LabeledTriplet
from macdm.schemas.checkpoint import CheckpointKind, CheckpointMeta
from macdm.schemas.training import TrainConfig
from macdm.training.data import Batch, TripletDataset, batch_stream
from macdm.training.loop import run_loop

from .metrics import ConfusionCounts

logger = logging.getLogger(__name__)

DEFAULT_WIDTHS = (16, 32, 64)


class PhantomResNet(nn.Module):
    """Residual stages with stride-2 downsampling, global average pooling and a linear head."""

    def __init__(self, widths: Sequence[int] = DEFAULT_WIDTHS, in_channels: int = 1) -> None:
        super().__init__()
        self.widths = tuple(widths)
        self.stem = nn.Conv2d(in_channels, self.widths[0], 3, padding=1)
        layers = []
        current = self.widths[0]
        for i, width in enumerate(self.widths):
            layers.append(ResBlock(current, width))
            current = width
            if i != len(self.widths) - 1:
                layers.append(Downsample(current))
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(current, 2)

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    def features(self, x: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.body(self.stem(x)))
        return h.mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


def image_batch(images: np.ndarray) -> torch.Tensor:
    """(N, H, W) images in [0, 1] -> (N, 1, H, W) model-range tensor."""
    return torch.from_numpy(to_model_range(np.asarray(images, dtype=np.float32))[:, None])


def _require_both_classes(corpus: Corpus, what: str) -> None:
    labels = corpus.labels()
    if labels.size == 0 or labels.min() == labels.max():
        raise InsufficientDataError(f"{what} needs both classes in its training set")


def _meta(config: TrainConfig, widths: Sequence[int], kind: CheckpointKind, extra: dict) -> CheckpointMeta:
    return CheckpointMeta(
        kind=kind,
        network={"widths": list(widths)},
        train_config_hash=config_hash(config.model_dump(mode="json")),
        seed=config.seed,
        extra=extra,
    )


def train_downstream_classifier(
    train: Corpus,
    config: TrainConfig,
    device: str = "cpu",
    output_path: Optional[Path] = None,
    widths: Sequence[int] = DEFAULT_WIDTHS,
    progress: bool = False,
) -> Tuple[PhantomResNet, Optional[Checkpoint]]:
    _require_both_classes(train, "downstream classifier")
    torch.manual_seed(derive_seed(config.seed, "downstream", "init"))
    model = PhantomResNet(widths).to(device)
    dataset = TripletDataset(train.triplets)
    batches = batch_stream(dataset, config.batch_size, derive_seed(config.seed, "downstream", "order"))
    flips = torch_generator(derive_seed(config.seed, "downstream", "flip"), device)

    def step(batch: Batch):
        stacks, labels, _ = batch
        x, labels = stacks[:, :1].to(device), labels.to(device)
        flip = torch.rand(x.shape[0], generator=flips, device=device) < 0.5
        x = torch.where(flip[:, None, None, None], x.flip(-1), x)
        logits = model(x)
        loss = F.cross_entropy(logits, labels)
        return loss, {"cross_entropy": float(loss)}

    meta = _meta(config, widths, CheckpointKind.DOWNSTREAM_CLASSIFIER, {"records": len(train)})
    result = run_loop(model, step, batches, config, meta, output_path, ("cross_entropy",), progress)
    return model, result.checkpoint


def predict_labels(model: PhantomResNet, triplets: Sequence[LabeledTriplet], batch_size: int = 64) -> np.ndarray:
    device = next(model.parameters()).device
    model.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(triplets), batch_size):
            chunk = np.stack([t.image for t in triplets[start : start + batch_size]])
            preds.append(model(image_batch(chunk).to(device)).argmax(dim=-1).cpu().numpy())
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate_downstream(model: PhantomResNet, test: Corpus) -> ConfusionCounts:
    return ConfusionCounts.from_predictions(test.labels(), predict_labels(model, test.triplets))


def train_eval_downstream_classifier(
    train: Corpus, test: Corpus, config: TrainConfig, device: str = "cpu"
) -> ConfusionCounts:
    """Fit on `train`, score on `test`; deterministic under a fixed seed."""
    model, _ = train_downstream_classifier(train, config, device)
    counts = evaluate_downstream(model, test)
    logger.info("downstream classifier on %d test records: %s", len(test), counts)
    return counts


def extract_features(model: PhantomResNet, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Penultimate-layer features for (N, H, W) images in [0, 1]."""
    device = next(model.parameters()).device
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = image_batch(images[start : start + batch_size]).to(device)
            out.append(model.features(x).double().cpu().numpy())
    return np.concatenate(out)


def load_downstream(path: Path, device: str = "cpu") -> Tuple[PhantomResNet, CheckpointMeta]:
    state, meta = load_state(path, device)
    if meta.kind != CheckpointKind.DOWNSTREAM_CLASSIFIER:
        raise CheckpointError(f"{path} holds a {meta.kind.value}, expected a downstream classifier")
    model = PhantomResNet(meta.network.get("widths", DEFAULT_WIDTHS))
    model.load_state_dict(state)
    model.to(device).eval()
    return model, meta
