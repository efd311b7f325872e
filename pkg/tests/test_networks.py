from __future__ import annotations

import pytest
import torch

from macdm.core.exceptions import CheckpointError, CheckpointMismatchError, ShapeMismatchError, TimestepError
from macdm.networks.checkpoint import (
    check_compatible,
    checkpoint_digest,
    load_network,
    save_checkpoint,
    state_digest,
)
from macdm.networks.inference import (
    DenoiserOutput,
    NoisyTriplet,
    classifier_forward,
    classifier_input_gradient,
    denoiser_forward,
)
from macdm.schemas.checkpoint import CheckpointKind, CheckpointMeta
from macdm.schemas.diffusion import ScheduleConfig
from macdm.schemas.training import ChannelWeights

from .conftest import TINY_NETWORK, TINY_SCHEDULE


def _state(batch: int = 2, seed: int = 0) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.randn((batch, 3, 16, 16), generator=gen)


def test_noisy_triplet_applies_channel_weights():
    state = torch.ones(2, 3, 4, 4)
    noisy = NoisyTriplet.from_state(state, 5, ChannelWeights(w1=1.0, w2=0.8, w3=0.0))
    assert noisy.t.tolist() == [5, 5]
    assert float(noisy.image_channel.max()) == 1.0
    assert torch.allclose(noisy.bone_channel, torch.full((2, 4, 4), 0.8))
    assert float(noisy.lesion_channel.abs().max()) == 0.0


def test_noisy_triplet_rejects_mismatched_timesteps():
    with pytest.raises(ShapeMismatchError):
        NoisyTriplet(stack=torch.zeros(2, 3, 4, 4), t=torch.tensor([1, 2, 3]))


def test_denoiser_output_layout(denoiser):
    noisy = NoisyTriplet.from_state(_state(), torch.tensor([1, 20]), ChannelWeights())
    out = denoiser_forward(denoiser, noisy)
    assert out.eps_hat.shape == (2, 3, 16, 16)
    assert out.v.shape == (2, 3, 16, 16)
    assert bool(((out.v >= 0) & (out.v <= 1)).all())


def test_denoiser_rejects_out_of_range_inputs(denoiser):
    with pytest.raises(TimestepError):
        denoiser_forward(denoiser, NoisyTriplet.from_state(_state(), 21, ChannelWeights()))
    with pytest.raises(TimestepError):
        denoiser_forward(denoiser, NoisyTriplet.from_state(_state(), 0, ChannelWeights()))
    with pytest.raises(ShapeMismatchError):
        denoiser_forward(denoiser, NoisyTriplet.from_state(torch.zeros(1, 3, 8, 8), 3, ChannelWeights()))


def test_classifier_returns_log_probabilities(classifier):
    log_probs = classifier_forward(classifier, NoisyTriplet.from_state(_state(3), 4, ChannelWeights()))
    assert log_probs.shape == (3, 2)
    torch.testing.assert_close(log_probs.exp().sum(dim=1), torch.ones(3))


@pytest.mark.parametrize("seed", range(10))
def test_classifier_gradient_matches_finite_differences(classifier, seed):
    model = classifier.double()
    gen = torch.Generator().manual_seed(100 + seed)
    t = int(torch.randint(1, TINY_SCHEDULE.timesteps + 1, (1,), generator=gen))
    noisy = NoisyTriplet.from_state(_state(1, seed=seed).double(), t, ChannelWeights())
    grad = classifier_input_gradient(model, noisy, 1)
    assert grad.shape == noisy.stack.shape
    assert grad.dtype == torch.float64

    h = 1e-6
    rows = torch.randint(0, 16, (10,), generator=gen).tolist()
    cols = torch.randint(0, 16, (10,), generator=gen).tolist()
    for j, (row, col) in enumerate(zip(rows, cols)):
        # Cycle the channel so image, bone and lesion inputs are all covered.
        index = (0, j % 3, row, col)
        plus, minus = noisy.stack.clone(), noisy.stack.clone()
        plus[index] += h
        minus[index] -= h
        with torch.no_grad():
            numeric = (model(plus, noisy.t)[0, 1] - model(minus, noisy.t)[0, 1]) / (2 * h)
        assert float(grad[index]) == pytest.approx(float(numeric), rel=1e-4, abs=1e-7), index


def test_classifier_gradient_rejects_bad_class(classifier):
    noisy = NoisyTriplet.from_state(_state(1), 3, ChannelWeights())
    with pytest.raises(ValueError):
        classifier_input_gradient(classifier, noisy, 2)


def test_from_raw_splits_channels():
    raw = torch.zeros(1, 6, 2, 2)
    raw[:, :3] = 1.5
    out = DenoiserOutput.from_raw(raw)
    assert torch.all(out.eps_hat == 1.5)
    assert torch.allclose(out.v, torch.full((1, 3, 2, 2), 0.5))


def _meta(kind: CheckpointKind, **changes) -> CheckpointMeta:
    meta = CheckpointMeta(
        kind=kind,
        network=TINY_NETWORK.model_dump(mode="json"),
        schedule=TINY_SCHEDULE,
        weights=ChannelWeights(),
    )
    return meta.model_copy(update=changes)


def test_checkpoint_round_trip_restores_weights(tmp_path, denoiser):
    saved = save_checkpoint(denoiser, _meta(CheckpointKind.DENOISER), tmp_path / "denoiser.pt")
    assert saved.sidecar.exists()
    model, meta = load_network(saved.path, CheckpointKind.DENOISER)
    assert meta.kind == CheckpointKind.DENOISER
    assert state_digest(model) == state_digest(denoiser)
    assert checkpoint_digest(saved.path) == state_digest(denoiser)
    assert model.timesteps == TINY_SCHEDULE.timesteps


def test_loading_wrong_kind_or_missing_sidecar_fails(tmp_path, denoiser):
    saved = save_checkpoint(denoiser, _meta(CheckpointKind.DENOISER), tmp_path / "denoiser.pt")
    with pytest.raises(CheckpointError):
        load_network(saved.path, CheckpointKind.GUIDANCE_CLASSIFIER)
    saved.sidecar.unlink()
    with pytest.raises(CheckpointError):
        load_network(saved.path)


def test_state_digest_is_stable_across_saves(tmp_path, classifier):
    first = save_checkpoint(classifier, _meta(CheckpointKind.GUIDANCE_CLASSIFIER), tmp_path / "a.pt")
    second = save_checkpoint(classifier, _meta(CheckpointKind.GUIDANCE_CLASSIFIER), tmp_path / "b.pt")
    assert checkpoint_digest(first.path) == checkpoint_digest(second.path)


def test_incompatible_pairs_are_reported():
    denoiser = _meta(CheckpointKind.DENOISER)
    check_compatible(denoiser, _meta(CheckpointKind.GUIDANCE_CLASSIFIER))
    with pytest.raises(CheckpointMismatchError, match="schedule"):
        check_compatible(
            denoiser, _meta(CheckpointKind.GUIDANCE_CLASSIFIER, schedule=ScheduleConfig(timesteps=40))
        )
    with pytest.raises(CheckpointMismatchError, match="channel weights"):
        check_compatible(
            denoiser, _meta(CheckpointKind.GUIDANCE_CLASSIFIER, weights=ChannelWeights.mask_free())
        )
