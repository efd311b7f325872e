from __future__ import annotations

from typing import Dict, List, Tuple

from macdm.core.exceptions import InsufficientDataError
from macdm.core.seeding import derive_seed, numpy_rng
from macdm.schemas.dataset import DatasetManifest

from .enums import Label
from .triplet import Corpus


def split_folds(manifest: DatasetManifest, k: int, seed: int) -> DatasetManifest:
    """
    Stratified k-fold assignment.

    Each class is shuffled with its own seeded permutation and dealt round-robin, so per-fold class
    counts differ by at most one.
    """
    if k < 2:
        raise InsufficientDataError(f"need at least 2 folds, got {k}")
    folds: Dict[str, int] = {}
    for label in Label:
        ids = sorted(r.id for r in manifest.records if r.label == label)
        if len(ids) < k:
            raise InsufficientDataError(f"{len(ids)} {label.value} records cannot fill {k} folds")
        order = numpy_rng(derive_seed(seed, "folds", label.value)).permutation(len(ids))
        for position, index in enumerate(order):
            folds[ids[index]] = position % k
    records = [r.model_copy(update={"fold": folds[r.id]}) for r in manifest.records]
    return manifest.model_copy(update={"records": records, "num_folds": k})


def fold_split(corpus: Corpus, fold: int) -> Tuple[Corpus, Corpus]:
    """(train, test) where test is the given fold."""
    if corpus.manifest.num_folds is None:
        raise InsufficientDataError("corpus has no fold assignment")
    test_ids = [r.id for r in corpus.manifest.records if r.fold == fold]
    train_ids = [r.id for r in corpus.manifest.records if r.fold != fold]
    return corpus.subset(train_ids), corpus.subset(test_ids)


def assign_folds(corpus: Corpus, k: int, seed: int) -> Corpus:
    return Corpus(split_folds(corpus.manifest, k, seed), corpus.triplets)


def fold_sizes(manifest: DatasetManifest) -> List[Dict[Label, int]]:
    sizes = [{label: 0 for label in Label} for _ in range(manifest.num_folds or 0)]
    for record in manifest.records:
        if record.fold is not None:
            sizes[record.fold][record.label] += 1
    return sizes


def holdout_split(corpus: Corpus, test_fraction: float, seed: int) -> Tuple[Corpus, Corpus]:
    """
    Stratified (train, test) split; each class sends round(fraction * n) records to test, at
    least one when the class has two or more records.
    """
    if not 0.0 < test_fraction < 1.0:
        raise InsufficientDataError(f"test fraction must lie in (0, 1), got {test_fraction}")
    test_ids: List[str] = []
    for label in Label:
        ids = sorted(t.id for t in corpus.of_label(label))
        if not ids:
            continue
        n_test = int(round(test_fraction * len(ids)))
        if len(ids) >= 2:
            n_test = min(max(n_test, 1), len(ids) - 1)
        order = numpy_rng(derive_seed(seed, "holdout", label.value)).permutation(len(ids))
        test_ids.extend(ids[i] for i in order[:n_test])
    wanted = set(test_ids)
    train_ids = [t.id for t in corpus if t.id not in wanted]
    return corpus.subset(train_ids), corpus.subset([t.id for t in corpus if t.id in wanted])
