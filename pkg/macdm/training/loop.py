from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import torch
from torch import nn
from torch.optim.swa_utils import AveragedModel, get_ema_multi_avg_fn
from tqdm import tqdm

from macdm.core.exceptions import NumericalError, TrainingDivergedError
from macdm.networks.checkpoint import Checkpoint, save_checkpoint
from macdm.schemas.checkpoint import CheckpointMeta
from macdm.schemas.training import TrainConfig

from .data import Batch

logger = logging.getLogger(__name__)

StepFn = Callable[[Batch], Tuple[torch.Tensor, Dict[str, float]]]


@dataclass
class LossHistory:
    """Per-iteration scalars, written as CSV with an `iteration` column first."""

    columns: Sequence[str]
    rows: List[Tuple[int, ...]] = field(default_factory=list)

    def append(self, iteration: int, values: Dict[str, float]) -> None:
        self.rows.append((iteration, *(values[c] for c in self.columns)))

    def series(self, column: str) -> List[float]:
        idx = 1 + list(self.columns).index(column)
        return [row[idx] for row in self.rows]

    def head_mean(self, column: str, n: int = 100) -> float:
        values = self.series(column)[:n]
        return sum(values) / len(values)

    def tail_mean(self, column: str, n: int = 100) -> float:
        values = self.series(column)[-n:]
        return sum(values) / len(values)

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", *self.columns])
            for row in self.rows:
                writer.writerow([row[0], *(repr(float(v)) for v in row[1:])])

    @classmethod
    def read_csv(cls, path: Path) -> "LossHistory":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            history = cls(columns=header[1:])
            for row in reader:
                history.rows.append((int(row[0]), *(float(v) for v in row[1:])))
        return history


@dataclass
class TrainingResult:
    checkpoint: Optional[Checkpoint]
    history: LossHistory


def run_loop(
    model: nn.Module,
    step: StepFn,
    batches: Iterator[Batch],
    config: TrainConfig,
    meta: CheckpointMeta,
    checkpoint_path: Optional[Path],
    columns: Sequence[str],
    progress: bool = False,
) -> TrainingResult:
    """
    Adam with gradient-norm clipping, optional EMA, periodic checkpoints and a loss CSV.

    Without a checkpoint path nothing is written and the trained weights stay in `model`.

    A non-finite loss or gradient aborts with TrainingDivergedError pointing at the last
    checkpoint written.
    """
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    ema: Optional[AveragedModel] = None
    if config.ema_decay is not None:
        ema = AveragedModel(model, multi_avg_fn=get_ema_multi_avg_fn(config.ema_decay))
    history = LossHistory(columns=list(columns))
    last_good: Optional[Path] = None
    saved: Optional[Checkpoint] = None

    def checkpoint(iteration: int) -> Checkpoint:
        path = Path(checkpoint_path)
        csv_path = path.with_name(path.stem + "_loss.csv")
        history.write_csv(csv_path)
        update = {"iterations_completed": iteration, "loss_history": csv_path.name}
        target = ema.module if ema is not None else model
        return save_checkpoint(target, meta.model_copy(update=update), path)

    model.train()
    bar = tqdm(range(1, config.iterations + 1), desc=meta.kind.value, disable=not progress)
    for iteration in bar:
        batch = next(batches)
        optimizer.zero_grad(set_to_none=True)
        try:
            loss, values = step(batch)
        except NumericalError as exc:
            raise TrainingDivergedError(
                exc.args[0], {**exc.diagnostics, "iteration": iteration}, last_good
            ) from exc
        loss.backward()
        grad_norm = torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        if not torch.isfinite(grad_norm):
            raise TrainingDivergedError(
                "gradient norm is not finite",
                {"iteration": iteration, "records": batch[2]},
                last_good,
            )
        optimizer.step()
        if ema is not None:
            ema.update_parameters(model)
        history.append(iteration, values)

        if iteration % config.log_every == 0:
            summary = ", ".join(f"{k}={v:.4g}" for k, v in values.items())
            logger.info("%s iteration %d: %s", meta.kind.value, iteration, summary)
            bar.set_postfix(values)
        if checkpoint_path is None:
            continue
        if iteration % config.checkpoint_every == 0 or iteration == config.iterations:
            saved = checkpoint(iteration)
            last_good = saved.path

    if ema is not None:
        model.load_state_dict(ema.module.state_dict())
    model.eval()
    return TrainingResult(checkpoint=saved, history=history)
