from __future__ import annotations

import numpy as np
import pytest

from macdm.core.exceptions import DatasetError, InsufficientDataError
from macdm.phantoms.enums import Label
from macdm.phantoms.folds import assign_folds, fold_sizes, fold_split, holdout_split
from macdm.phantoms.generator import (
    MAX_LESION_FRACTION,
    MIN_LESION_FRACTION,
    PhantomStyle,
    boundary_band,
    generate_corpus,
    generate_phantom,
)
from macdm.phantoms.storage import load_dataset, manifest_hash, read_manifest, save_dataset
from macdm.phantoms.triplet import Corpus, LabeledTriplet


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4, 5])
def test_cml_lesions_stay_in_the_bone_margin(seed):
    phantom = generate_phantom(seed, Label.CML, 32)
    band = boundary_band(phantom.bone_mask.astype(bool), max(2, 32 // 10))
    lesion = phantom.lesion_mask.astype(bool)
    assert lesion.any()
    assert not (lesion & ~band).any()
    assert MIN_LESION_FRACTION <= phantom.lesion_fraction() <= MAX_LESION_FRACTION


def test_normal_phantoms_have_no_lesion():
    phantom = generate_phantom(3, Label.NORMAL, 24)
    assert phantom.bone_mask.any()
    assert not phantom.lesion_mask.any()
    assert 0.0 <= phantom.image.min() and phantom.image.max() <= 1.0


def test_generation_is_deterministic_per_record():
    a = generate_corpus(3, 2, 16, seed=8)
    b = generate_corpus(3, 2, 16, seed=8)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.lesion_mask, y.lesion_mask)
    # Record seeds depend on ids only, so growing the corpus keeps earlier records.
    bigger = generate_corpus(4, 2, 16, seed=8)
    np.testing.assert_array_equal(bigger.by_id["normal-0001"].image, a.by_id["normal-0001"].image)


def test_shifted_style_changes_appearance():
    default = generate_phantom(5, Label.NORMAL, 32)
    shifted = generate_phantom(5, Label.NORMAL, 32, style=PhantomStyle.shifted())
    np.testing.assert_array_equal(default.bone_mask, shifted.bone_mask)
    assert not np.array_equal(default.image, shifted.image)


def test_corpus_ids_and_prefix():
    corpus = generate_corpus(2, 1, 16, seed=0, prefix="ind-")
    assert corpus.manifest.ids == ["ind-normal-0000", "ind-normal-0001", "ind-cml-0000"]
    assert corpus.manifest.label_counts() == {Label.NORMAL: 2, Label.CML: 1}


def test_small_sizes_are_rejected():
    with pytest.raises(DatasetError):
        generate_phantom(0, Label.NORMAL, 8)


def test_triplet_validation():
    image = np.zeros((4, 4), dtype=np.float32)
    lesion = np.zeros((4, 4), dtype=np.uint8)
    lesion[0, 0] = 1
    with pytest.raises(DatasetError, match="lesion"):
        LabeledTriplet("x", image, np.ones((4, 4)), lesion, Label.NORMAL)
    with pytest.raises(DatasetError, match=r"\[y\]"):
        LabeledTriplet("y", image + 2.0, np.ones((4, 4)), lesion, Label.CML)
    with pytest.raises(DatasetError):
        LabeledTriplet("z", image, np.ones((3, 3)), lesion, Label.CML)


def test_model_stack_is_in_model_range(corpus):
    stack = corpus.triplets[0].model_stack()
    assert stack.shape == (3, 16, 16)
    assert stack.min() >= -1.0 and stack.max() <= 1.0
    assert set(np.unique(stack[1])) <= {-1.0, 1.0}


def test_save_and_load_round_trip(tmp_path, corpus):
    save_dataset(corpus, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert loaded.manifest.ids == corpus.manifest.ids
    for a, b in zip(corpus, loaded):
        assert np.abs(a.image - b.image).max() <= 0.5 / 255 + 1e-6
        np.testing.assert_array_equal(a.bone_mask, b.bone_mask)
        np.testing.assert_array_equal(a.lesion_mask, b.lesion_mask)
        assert a.label == b.label


def test_lossless_sidecars_keep_float_images(tmp_path, corpus):
    save_dataset(corpus, tmp_path / "ds", lossless=True)
    loaded = load_dataset(tmp_path / "ds")
    for a, b in zip(corpus, loaded):
        np.testing.assert_array_equal(a.image, b.image)


def test_existing_output_is_not_clobbered(tmp_path, corpus):
    save_dataset(corpus, tmp_path / "ds")
    before = manifest_hash(tmp_path / "ds")
    with pytest.raises(DatasetError, match="exists"):
        save_dataset(corpus, tmp_path / "ds")
    assert manifest_hash(tmp_path / "ds") == before
    save_dataset(corpus, tmp_path / "ds", overwrite=True)
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".ds")]


def test_corrupt_files_name_the_record(tmp_path, corpus):
    save_dataset(corpus, tmp_path / "ds")
    record = read_manifest(tmp_path / "ds").records[2]
    (tmp_path / "ds" / record.image).write_bytes(b"not a png")
    with pytest.raises(DatasetError, match=record.id):
        load_dataset(tmp_path / "ds")
    (tmp_path / "ds" / record.image).unlink()
    with pytest.raises(DatasetError, match="missing"):
        load_dataset(tmp_path / "ds", verify=False)


def test_manifest_hash_is_reproducible(tmp_path):
    save_dataset(generate_corpus(2, 2, 16, seed=1), tmp_path / "a")
    save_dataset(generate_corpus(2, 2, 16, seed=1), tmp_path / "b")
    save_dataset(generate_corpus(2, 2, 16, seed=2), tmp_path / "c")
    assert manifest_hash(tmp_path / "a") == manifest_hash(tmp_path / "b")
    assert manifest_hash(tmp_path / "a") != manifest_hash(tmp_path / "c")


def test_stratified_folds_balance_classes():
    corpus = assign_folds(generate_corpus(11, 7, 16, seed=3), k=3, seed=3)
    sizes = fold_sizes(corpus.manifest)
    for label in Label:
        counts = [fold[label] for fold in sizes]
        assert max(counts) - min(counts) <= 1
    train, test = fold_split(corpus, 1)
    assert len(train) + len(test) == len(corpus)
    assert not set(train.manifest.ids) & set(test.manifest.ids)
    assert train.manifest.num_folds is None


def test_folds_need_enough_records():
    with pytest.raises(InsufficientDataError):
        assign_folds(generate_corpus(5, 2, 16, seed=0), k=3, seed=0)
    with pytest.raises(InsufficientDataError, match="0 cml"):
        assign_folds(generate_corpus(6, 0, 16, seed=0), k=3, seed=0)


def test_holdout_split_keeps_both_classes():
    corpus = generate_corpus(6, 2, 16, seed=4)
    train, test = holdout_split(corpus, 0.25, seed=4)
    assert len(train) + len(test) == len(corpus)
    for part in (train, test):
        assert {t.label for t in part} == {Label.NORMAL, Label.CML}
    again, _ = holdout_split(corpus, 0.25, seed=4)
    assert again.manifest.ids == train.manifest.ids


def test_subset_and_merge(corpus):
    cml = corpus.subset(t.id for t in corpus.of_label(Label.CML))
    assert all(t.label == Label.CML for t in cml)
    merged = cml.merged_with(corpus.subset(t.id for t in corpus.of_label(Label.NORMAL)))
    assert len(merged) == len(corpus)
    with pytest.raises(DatasetError):
        cml.merged_with(generate_corpus(1, 0, 24, seed=0))
    with pytest.raises(DatasetError):
        Corpus(corpus.manifest, list(reversed(corpus.triplets)))
