"""
Comparative evaluation protocols.

Every condition in a comparison sees the same folds, the same test records and the same seed
bundle; only the training source changes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from macdm.core.exceptions import InsufficientDataError
from macdm.core.seeding import derive_seed, numpy_rng
from macdm.phantoms.enums import Label
from macdm.phantoms.folds import fold_split
from macdm.phantoms.triplet import Corpus, LabeledTriplet
from macdm.sampling.translate import SamplingModels, translate_batch
from macdm.schemas.sampling import GuidanceSpec
from macdm.schemas.training import TrainConfig

from .downstream import PhantomResNet, evaluate_downstream, predict_labels, train_downstream_classifier
from .fid import fid_with_extractor
from .metrics import ClassificationMetrics, ConfusionCounts, mean_std
from .reports import ClassificationResult, MetricsBlock, SegmentationResult, SweepPoint, SweepReport
from .segmentation import train_eval_segmenter

logger = logging.getLogger(__name__)

FID_TOLERANCE = 0.2


@dataclass
class Condition:
    """A named training source: real folds plus optional synthetic records."""

    name: str
    synthetic: Optional[Corpus] = None
    include_real: bool = True

    def training_set(self, real_train: Corpus) -> Corpus:
        """Synthetic records join only when their source record is in the real training split."""
        train_ids = set(real_train.manifest.ids)
        parts: List[Corpus] = []
        if self.include_real:
            parts.append(real_train)
        if self.synthetic is not None:
            keep = [t.id for t in self.synthetic if t.source_id is None or t.source_id in train_ids]
            parts.append(self.synthetic.subset(keep))
        if not parts:
            raise InsufficientDataError(f"condition {self.name} has no training source")
        merged = parts[0]
        for part in parts[1:]:
            merged = merged.merged_with(part)
        return merged


def run_classification_protocol(
    real: Corpus,
    conditions: Sequence[Condition],
    config: TrainConfig,
    independent_test: Optional[Corpus] = None,
    device: str = "cpu",
) -> List[ClassificationResult]:
    """
    Stratified k-fold CV per condition; the fold model with the best validation accuracy is then
    scored on the independent test corpus.
    """
    k = real.manifest.num_folds
    if k is None:
        raise InsufficientDataError("classification protocol needs a fold assignment")
    results = []
    for condition in conditions:
        fold_blocks: List[MetricsBlock] = []
        accuracies: List[float] = []
        pooled = ConfusionCounts()
        best_fold, best_accuracy, best_model = None, -1.0, None
        for fold in range(k):
            real_train, test = fold_split(real, fold)
            fold_config = config.model_copy(update={"seed": derive_seed(config.seed, "fold", fold)})
            model, _ = train_downstream_classifier(condition.training_set(real_train), fold_config, device)
            counts = evaluate_downstream(model, test)
            pooled = pooled + counts
            fold_blocks.append(MetricsBlock.from_counts(counts))
            fold_accuracy = ClassificationMetrics.partial(counts).accuracy or 0.0
            accuracies.append(fold_accuracy)
            if fold_accuracy > best_accuracy:
                best_fold, best_accuracy, best_model = fold, fold_accuracy, model
        independent = None
        if independent_test is not None and best_model is not None:
            independent = MetricsBlock.from_counts(evaluate_downstream(best_model, independent_test))
        mean, std = mean_std(accuracies)
        logger.info("classification %s: CV accuracy %.4f ± %.4f", condition.name, mean, std)
        results.append(
            ClassificationResult(
                condition=condition.name,
                folds=fold_blocks,
                pooled=MetricsBlock.from_counts(pooled),
                accuracy_mean=mean,
                accuracy_std=std,
                best_fold=best_fold,
                independent=independent,
            )
        )
    return results


def run_segmentation_protocol(
    real_train: Corpus,
    synthetic: Corpus,
    test: Corpus,
    config: TrainConfig,
    device: str = "cpu",
) -> List[SegmentationResult]:
    """Real only, augmented only and real + augmented, all scored on the same test records."""
    conditions = [
        Condition("real", None, include_real=True),
        Condition("augmented", synthetic, include_real=False),
        Condition("real+augmented", synthetic, include_real=True),
    ]
    results = []
    n_test = sum(1 for t in test if t.label == Label.CML and t.lesion_mask.any())
    for condition in conditions:
        train = condition.training_set(real_train)
        summary = train_eval_segmenter(train, test, config, device)
        results.append(
            SegmentationResult(
                condition=condition.name,
                dice_mean=summary.mean,
                dice_std=summary.std,
                n_train=len(train),
                n_test=n_test,
            )
        )
    return results


def scarce_subset(corpus: Corpus, n_normal: int, n_cml: int, seed: int) -> Corpus:
    """Seeded per-class subsample, e.g. 80 normal vs 20 CML for the scarce-CML comparison."""
    keep: List[str] = []
    for label, count in ((Label.NORMAL, n_normal), (Label.CML, n_cml)):
        ids = sorted(t.id for t in corpus.of_label(label))
        if len(ids) < count:
            raise InsufficientDataError(f"need {count} {label.value} records, corpus has {len(ids)}")
        order = numpy_rng(derive_seed(seed, "scarce", label.value)).permutation(len(ids))
        keep.extend(ids[i] for i in order[:count])
    wanted = set(keep)
    return corpus.subset([t.id for t in corpus if t.id in wanted])


def target_rate(judge: PhantomResNet, triplets: Sequence[LabeledTriplet], target: Label) -> float:
    if not triplets:
        return 0.0
    return float(np.mean(predict_labels(judge, triplets) == target.index))


def sweep_guidance(
    models: SamplingModels,
    sources: Sequence[LabeledTriplet],
    reference: Sequence[LabeledTriplet],
    judge: PhantomResNet,
    judge_sha256: str,
    base: GuidanceSpec,
    gradient_scales: Sequence[float],
    start_steps: Optional[Sequence[int]] = None,
    fid_tolerance: float = FID_TOLERANCE,
) -> SweepReport:
    """
    Grid over (g, Z). Picks the highest target-class rate whose FID stays within
    (1 + fid_tolerance)× the unguided FID at the same Z.
    """
    scales = sorted(set([0.0, *gradient_scales]))
    steps = list(start_steps) if start_steps else [base.resolve_start_step(models.schedule.timesteps)]
    points: List[SweepPoint] = []
    baseline: Dict[int, float] = {}
    for z in steps:
        for g in scales:
            spec = base.model_copy(update={"gradient_scale": g, "start_step": z})
            outputs = translate_batch(sources, models, spec)
            triplets = [r.to_triplet(f"sweep-{i:04d}") for i, r in enumerate(outputs)]
            fid = fid_with_extractor(reference, triplets, judge, judge_sha256, f"g={g},Z={z}").value
            if g == 0:
                baseline[z] = fid
            lesion_rate = float(np.mean([r.lesion_mask.any() for r in outputs])) if outputs else 0.0
            points.append(
                SweepPoint(
                    gradient_scale=g,
                    start_step=z,
                    target_rate=target_rate(judge, triplets, base.target_class),
                    lesion_rate=lesion_rate,
                    fid=fid,
                )
            )
    admissible = [p for p in points if p.fid <= (1.0 + fid_tolerance) * baseline[p.start_step]]
    selected = max(admissible, key=lambda p: (p.target_rate, -p.fid))
    logger.info(
        "guidance sweep selected g=%s Z=%d (target rate %.3f, FID %.4f)",
        selected.gradient_scale,
        selected.start_step,
        selected.target_rate,
        selected.fid,
    )
    return SweepReport(points=points, selected=selected, fid_tolerance=fid_tolerance)
