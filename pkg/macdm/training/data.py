from __future__ import annotations

from typing import Iterator, List, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from macdm.core.exceptions import InsufficientDataError
from macdm.core.seeding import torch_generator
from macdm.phantoms.triplet import LabeledTriplet

Batch = Tuple[torch.Tensor, torch.Tensor, List[str]]


class TripletDataset(Dataset):
    """Model-range (3, H, W) stacks with class indices; decoded once up front."""

    def __init__(self, triplets: Sequence[LabeledTriplet]) -> None:
        if not triplets:
            raise InsufficientDataError("cannot train on an empty dataset")
        self.ids = [t.id for t in triplets]
        self.stacks = torch.from_numpy(np.stack([t.model_stack() for t in triplets]))
        self.labels = torch.tensor([t.label.index for t in triplets], dtype=torch.long)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, index: int) -> Tuple[torch.Tensor, torch.Tensor, int]:
        return self.stacks[index], self.labels[index], index

    @property
    def class_counts(self) -> Tuple[int, int]:
        positives = int(self.labels.sum())
        return len(self) - positives, positives


def batch_stream(dataset: TripletDataset, batch_size: int, seed: int) -> Iterator[Batch]:
    """Endless reshuffled epochs; the order depends only on `seed`."""
    loader = DataLoader(
        dataset,
        batch_size=min(batch_size, len(dataset)),
        shuffle=True,
        drop_last=len(dataset) >= batch_size,
        generator=torch_generator(seed),
    )
    while True:
        for stacks, labels, index in loader:
            yield stacks, labels, [dataset.ids[i] for i in index.tolist()]
