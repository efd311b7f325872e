from __future__ import annotations

import json
from fractions import Fraction

import numpy as np
import pytest
import torch

from macdm.core.exceptions import (
    CheckpointError,
    InsufficientDataError,
    NumericalError,
    ShapeMismatchError,
    UndefinedMetricError,
)
from macdm.evaluation.downstream import (
    PhantomResNet,
    extract_features,
    load_downstream,
    train_downstream_classifier,
)
from macdm.evaluation.fid import fid_images, fid_with_extractor, noise_images
from macdm.evaluation.frechet import fit_gaussian, frechet_distance, sqrtm_psd
from macdm.evaluation.metrics import (
    ClassificationMetrics,
    ConfusionCounts,
    DiceSummary,
    accuracy,
    classification_metrics,
    dice,
    sensitivity,
    specificity,
)
from macdm.evaluation.protocols import Condition, run_classification_protocol, scarce_subset
from macdm.evaluation.reports import (
    ClassificationResult,
    FidResult,
    MetricsBlock,
    MetricsReport,
    ReportProvenance,
    render_text,
    write_report,
)
from macdm.evaluation.segmentation import soft_dice_loss, train_segmenter
from macdm.networks.checkpoint import save_checkpoint
from macdm.phantoms.enums import Label, Provenance
from macdm.phantoms.folds import assign_folds
from macdm.phantoms.generator import generate_corpus
from macdm.phantoms.triplet import Corpus
from macdm.schemas.checkpoint import CheckpointKind, CheckpointMeta
from macdm.schemas.training import TrainConfig

TINY_TRAIN = TrainConfig(iterations=2, batch_size=4, log_every=1, seed=3)


def test_metrics_on_reference_counts():
    counts = ConfusionCounts(tp=7, fp=4, tn=41, fn=1)
    assert sensitivity(counts) == Fraction(7, 8)
    assert specificity(counts) == Fraction(41, 45)
    assert accuracy(counts) == Fraction(48, 53)
    metrics = classification_metrics(counts)
    assert metrics.sensitivity == pytest.approx(0.875)
    assert metrics.specificity == pytest.approx(0.9111, abs=1e-4)
    assert metrics.accuracy == pytest.approx(0.9057, abs=1e-4)


def test_zero_denominators_are_undefined():
    only_negatives = ConfusionCounts(tn=5, fp=1)
    with pytest.raises(UndefinedMetricError):
        sensitivity(only_negatives)
    partial = ClassificationMetrics.partial(only_negatives)
    assert partial.sensitivity is None
    assert partial.specificity == pytest.approx(5 / 6)
    block = MetricsBlock.from_counts(only_negatives)
    assert block.sensitivity is None and block.tn == 5
    with pytest.raises(UndefinedMetricError):
        accuracy(ConfusionCounts())


def test_counts_from_predictions_and_addition():
    counts = ConfusionCounts.from_predictions([1, 1, 0, 0, 0], [1, 0, 0, 1, 0])
    assert counts == ConfusionCounts(tp=1, fp=1, tn=2, fn=1)
    assert (counts + counts).total == 10
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1)
    with pytest.raises(ShapeMismatchError):
        ConfusionCounts.from_predictions([1, 0], [1])


def test_dice_cases():
    empty = np.zeros((4, 4), dtype=np.uint8)
    full = np.ones((4, 4), dtype=np.uint8)
    half = full.copy()
    half[:2] = 0
    assert dice(empty, empty) == 1.0
    assert dice(full, full) == 1.0
    assert dice(empty, full) == 0.0
    assert dice(half, full) == pytest.approx(2 * 8 / (8 + 16))
    with pytest.raises(ShapeMismatchError):
        dice(full, np.ones((3, 3)))
    summary = DiceSummary([0.5, 0.7, 0.9])
    assert summary.mean == pytest.approx(0.7)
    assert summary.std == pytest.approx(0.2)


def test_soft_dice_loss_is_small_for_confident_matches():
    target = torch.zeros(1, 1, 4, 4)
    target[..., :2, :] = 1.0
    logits = (target * 2 - 1) * 20
    assert float(soft_dice_loss(logits, target)) < 1e-3
    assert float(soft_dice_loss(-logits, target)) > 0.9


def test_frechet_distance_of_identical_features_is_zero():
    features = np.random.default_rng(0).normal(size=(200, 5))
    assert frechet_distance(features, features) == pytest.approx(0.0, abs=1e-6)


def test_frechet_distance_grows_with_mean_shift():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(500, 4))
    b = rng.normal(size=(500, 4)) + 2.0
    ab, ba = frechet_distance(a, b), frechet_distance(b, a)
    assert ab == pytest.approx(ba, rel=1e-6)
    # The mean term alone contributes about 4 * 2^2.
    assert ab == pytest.approx(16.0, rel=0.1)
    assert frechet_distance(a, a + 0.5) < ab


def test_fit_gaussian_rejects_degenerate_input():
    with pytest.raises(ShapeMismatchError):
        fit_gaussian(np.zeros((1, 3)))
    bad = np.zeros((4, 2))
    bad[0, 0] = np.nan
    with pytest.raises(NumericalError):
        fit_gaussian(bad)


def test_sqrtm_psd_squares_back():
    m = np.array([[4.0, 1.0], [1.0, 3.0]])
    root = sqrtm_psd(m)
    np.testing.assert_allclose(root @ root, m, atol=1e-10)


def test_noise_images_are_valid_images():
    images = noise_images(3, 16, seed=0)
    assert images.shape == (3, 16, 16)
    assert images.min() >= 0.0 and images.max() <= 1.0
    np.testing.assert_array_equal(images, noise_images(3, 16, seed=0))


def test_fid_with_a_shared_extractor(tmp_path, corpus):
    model, checkpoint = train_downstream_classifier(
        corpus, TINY_TRAIN, output_path=tmp_path / "extractor.pt", widths=(8, 16)
    )
    features = extract_features(model, np.stack([t.image for t in corpus]))
    assert features.shape == (len(corpus), model.feature_dim)

    same = fid_with_extractor(corpus, corpus, model, "sha", "self")
    assert same.value == pytest.approx(0.0, abs=1e-4)
    noisy = fid_images(corpus, noise_images(len(corpus), 16, seed=1), checkpoint.path, label="noise")
    assert noisy.value > same.value
    assert noisy.n_b == len(corpus)

    loaded, meta = load_downstream(checkpoint.path)
    assert isinstance(loaded, PhantomResNet)
    assert meta.network["widths"] == [8, 16]


def test_downstream_classifier_needs_both_classes(corpus):
    normals = corpus.subset(t.id for t in corpus.of_label(Label.NORMAL))
    with pytest.raises(InsufficientDataError):
        train_downstream_classifier(normals, TINY_TRAIN)


def test_load_downstream_rejects_other_checkpoints(tmp_path, denoiser):
    saved = save_checkpoint(denoiser, CheckpointMeta(kind=CheckpointKind.DENOISER), tmp_path / "d.pt")
    with pytest.raises(CheckpointError):
        load_downstream(saved.path)


def test_segmenter_needs_lesions(corpus):
    normals = corpus.subset(t.id for t in corpus.of_label(Label.NORMAL))
    with pytest.raises(InsufficientDataError):
        train_segmenter(normals, TINY_TRAIN)


def test_synthetic_records_follow_their_sources(corpus):
    normals = corpus.of_label(Label.NORMAL)
    synthetic = Corpus.from_triplets(
        [
            normals[0].with_id("syn-a", provenance=Provenance.SYNTHETIC, source_id=normals[0].id),
            normals[1].with_id("syn-b", provenance=Provenance.SYNTHETIC, source_id=normals[1].id),
        ],
        resolution=16,
    )
    real_train = corpus.subset(t.id for t in corpus if t.id != normals[1].id)
    merged = Condition("aug", synthetic).training_set(real_train)
    assert "syn-a" in merged.manifest.ids
    assert "syn-b" not in merged.manifest.ids
    alone = Condition("aug-only", synthetic, include_real=False).training_set(real_train)
    assert alone.manifest.ids == ["syn-a"]
    with pytest.raises(InsufficientDataError):
        Condition("empty", None, include_real=False).training_set(real_train)


def test_scarce_subset_counts(corpus):
    subset = scarce_subset(corpus, 3, 2, seed=0)
    assert subset.manifest.label_counts() == {Label.NORMAL: 3, Label.CML: 2}
    assert scarce_subset(corpus, 3, 2, seed=0).manifest.ids == subset.manifest.ids
    with pytest.raises(InsufficientDataError):
        scarce_subset(corpus, 3, 10, seed=0)


def test_classification_protocol_shares_folds(corpus):
    real = assign_folds(corpus, k=2, seed=0)
    independent = generate_corpus(2, 2, 16, seed=99, prefix="ind-")
    results = run_classification_protocol(
        real, [Condition("real")], TINY_TRAIN, independent_test=independent
    )
    (result,) = results
    assert result.condition == "real"
    assert len(result.folds) == 2
    assert result.pooled.tp + result.pooled.fp + result.pooled.tn + result.pooled.fn == len(corpus)
    assert result.independent is not None
    assert result.best_fold in (0, 1)
    with pytest.raises(InsufficientDataError):
        run_classification_protocol(corpus, [Condition("real")], TINY_TRAIN)


def _report() -> MetricsReport:
    block = MetricsBlock.from_counts(ConfusionCounts(tp=7, fp=4, tn=41, fn=1))
    return MetricsReport(
        classification=[
            ClassificationResult(
                condition="real", pooled=block, accuracy_mean=0.9, accuracy_std=0.01, independent=block
            )
        ],
        fid=[FidResult(label="a-vs-b", value=1.5, extractor_sha256="abc", n_a=4, n_b=4)],
        provenance=ReportProvenance(seeds={"downstream": 1}, config_hash="h1"),
    )


def test_report_merge_and_files(tmp_path):
    other = MetricsReport(provenance=ReportProvenance(seeds={"segmenter": 2}, config_hash="h2"))
    merged = _report().merge(other)
    assert merged.provenance.seeds == {"downstream": 1, "segmenter": 2}
    assert merged.provenance.config_hash == "h2"
    assert len(merged.classification) == 1

    paths = write_report(merged, tmp_path / "report")
    payload = json.loads(paths["json"].read_text())
    assert payload["fid"][0]["value"] == 1.5
    assert "87.50%" in paths["text"].read_text()
    assert paths["csv"].read_text().splitlines()[0].startswith("section,condition")
    assert "independent" in render_text(merged)
