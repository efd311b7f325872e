from __future__ import annotations

import json

import numpy as np
import pytest

from macdm.core.exceptions import CheckpointMismatchError, ConfigError, TimestepError
from macdm.phantoms.enums import Label, Provenance
from macdm.phantoms.storage import load_dataset
from macdm.sampling.results import TRAJECTORY_SIDECAR, synthetic_id, write_samples
from macdm.sampling.translate import SamplingModels, generate_unconditional, translate_batch
from macdm.schemas.checkpoint import CheckpointKind, CheckpointMeta
from macdm.schemas.sampling import GuidanceSpec
from macdm.schemas.training import ChannelWeights

from .conftest import TINY_NETWORK, TINY_SCHEDULE

SPEC = GuidanceSpec(gradient_scale=1.0, start_step=8, ddim_steps=3, seed=4)


def _normals(corpus, n=3):
    return corpus.of_label(Label.NORMAL)[:n]


def test_zero_start_step_passes_inputs_through(sampling_models, corpus):
    inputs = _normals(corpus)
    spec = SPEC.model_copy(update={"start_step": 0})
    results = translate_batch(inputs, sampling_models, spec)
    for source, result in zip(inputs, results):
        np.testing.assert_array_equal(result.image, source.image)
        np.testing.assert_array_equal(result.bone_mask, source.bone_mask)
        assert result.metadata.start_step == 0
        assert result.metadata.steps == []


def test_translation_outputs_are_valid_records(sampling_models, corpus):
    results = translate_batch(_normals(corpus), sampling_models, SPEC)
    for result in results:
        assert result.image.min() >= 0.0 and result.image.max() <= 1.0
        assert set(np.unique(result.bone_mask)) <= {0, 1}
        assert set(np.unique(result.lesion_mask)) <= {0, 1}
        assert result.target_class == Label.CML
        assert result.metadata.masks_generated
        assert result.metadata.steps[0] == 8
    triplet = results[0].to_triplet("syn-0")
    assert triplet.label == Label.CML
    assert triplet.provenance == Provenance.SYNTHETIC
    assert triplet.source_id == results[0].metadata.source_id


def test_results_do_not_depend_on_batching(sampling_models, corpus):
    inputs = _normals(corpus, 4)
    whole = translate_batch(inputs, sampling_models, SPEC, batch_size=4)
    split = translate_batch(inputs, sampling_models, SPEC, batch_size=1)
    for a, b in zip(whole, split):
        np.testing.assert_allclose(a.image, b.image, atol=1e-4)
        assert a.metadata.seed == b.metadata.seed


def test_same_seed_reproduces_translation(sampling_models, corpus):
    a = translate_batch(_normals(corpus), sampling_models, SPEC)
    b = translate_batch(_normals(corpus), sampling_models, SPEC)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.lesion_mask, y.lesion_mask)


def test_normal_target_drops_lesions(sampling_models, corpus):
    spec = SPEC.model_copy(update={"target_class": Label.NORMAL})
    result = translate_batch(_normals(corpus, 1), sampling_models, spec)[0]
    result.lesion_mask[:] = 1
    assert not result.to_triplet("syn-n").lesion_mask.any()


def test_translation_rejects_bad_requests(sampling_models, corpus):
    with pytest.raises(TimestepError):
        translate_batch(_normals(corpus), sampling_models, SPEC.model_copy(update={"start_step": 21}))
    cml = corpus.of_label(Label.CML)[:1]
    with pytest.raises(ConfigError, match="normal"):
        translate_batch(cml, sampling_models, SPEC)
    translate_batch(cml, sampling_models, SPEC.model_copy(update={"allow_non_normal": True}))
    with pytest.raises(CheckpointMismatchError):
        translate_batch(_normals(corpus), sampling_models, SPEC.model_copy(update={"weights": ChannelWeights.mask_free()}))


def test_guidance_without_classifier_is_a_config_error(sampling_models, corpus):
    unguided = SamplingModels(
        sampling_models.denoiser, sampling_models.denoiser_meta, sampling_models.schedule
    )
    with pytest.raises(ConfigError):
        translate_batch(_normals(corpus), unguided, SPEC)
    translate_batch(_normals(corpus), unguided, SPEC.model_copy(update={"gradient_scale": 0.0}))


def test_mask_free_models_carry_input_masks(denoiser, schedule, corpus):
    weights = ChannelWeights.mask_free()
    meta = CheckpointMeta(
        kind=CheckpointKind.DENOISER,
        network=TINY_NETWORK.model_dump(mode="json"),
        schedule=TINY_SCHEDULE,
        weights=weights,
    )
    models = SamplingModels(denoiser, meta, schedule)
    spec = SPEC.model_copy(update={"weights": weights, "gradient_scale": 0.0})
    inputs = _normals(corpus, 2)
    for source, result in zip(inputs, translate_batch(inputs, models, spec)):
        np.testing.assert_array_equal(result.bone_mask, source.bone_mask)
        assert not result.metadata.masks_generated


def test_unconditional_generation(sampling_models):
    spec = SPEC.model_copy(update={"gradient_scale": 0.0})
    results = generate_unconditional(sampling_models, spec, count=3, batch_size=2)
    assert len(results) == 3
    assert all(r.metadata.start_step == 20 for r in results)
    assert len({r.metadata.seed for r in results}) == 3
    assert synthetic_id(results[0], 0) == "syn-cml-uncond-0000"


def test_written_samples_load_back_with_trajectories(tmp_path, sampling_models, corpus):
    results = translate_batch(_normals(corpus, 2), sampling_models, SPEC)
    write_samples(results, tmp_path / "out", resolution=16)
    loaded = load_dataset(tmp_path / "out")
    assert len(loaded) == 2
    assert all(t.provenance == Provenance.SYNTHETIC for t in loaded)
    trajectories = json.loads((tmp_path / "out" / TRAJECTORY_SIDECAR).read_text())
    assert set(trajectories) == set(loaded.manifest.ids)
    assert all(entry["gradient_scale"] == 1.0 for entry in trajectories.values())
