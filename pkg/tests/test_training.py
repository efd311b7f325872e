from __future__ import annotations

import itertools

import pytest
import torch
from torch import nn

from macdm.core.exceptions import ConfigError, InsufficientDataError, NumericalError, TrainingDivergedError
from macdm.networks.checkpoint import load_network, state_digest
from macdm.networks.inference import DenoiserOutput
from macdm.phantoms.enums import Label
from macdm.schemas.checkpoint import CheckpointKind, CheckpointMeta
from macdm.schemas.network import NetworkConfig
from macdm.schemas.training import ChannelWeights, TrainConfig
from macdm.training.classifier import evaluate_classifier_accuracy, train_classifier
from macdm.training.data import TripletDataset, batch_stream
from macdm.training.denoiser import train_denoiser
from macdm.training.loop import LossHistory, run_loop
from macdm.training.losses import (
    discretized_gaussian_log_likelihood,
    hybrid_loss,
    normal_kl,
    simple_from_output,
    simple_loss,
)

from .conftest import TINY_NETWORK, TINY_SCHEDULE

FAST = TrainConfig(iterations=2, batch_size=4, checkpoint_every=1, log_every=1)


def _batch(corpus, n=4):
    dataset = TripletDataset(corpus.triplets)
    return dataset.stacks[:n]


def test_normal_kl_vanishes_for_identical_gaussians():
    mean = torch.randn(5)
    logvar = torch.randn(5)
    assert torch.allclose(normal_kl(mean, logvar, mean, logvar), torch.zeros(5), atol=1e-7)
    assert bool((normal_kl(mean, logvar, mean + 1.0, logvar) > 0).all())


def test_discretized_likelihood_sums_to_one_over_bins():
    centres = torch.linspace(-1.0, 1.0, 256, dtype=torch.float64)
    mean = torch.full_like(centres, 0.1)
    log_scale = torch.full_like(centres, float(torch.log(torch.tensor(0.3))))
    total = discretized_gaussian_log_likelihood(centres, mean, log_scale).exp().sum()
    assert float(total) == pytest.approx(1.0, abs=1e-6)


def test_hybrid_loss_terms(denoiser, schedule, corpus):
    x0 = _batch(corpus)
    gen = torch.Generator().manual_seed(0)
    t = torch.tensor([1, 5, 12, 20])
    eps = torch.randn(x0.shape, generator=gen)
    terms = hybrid_loss(denoiser, x0, t, eps, schedule, ChannelWeights(), lambda_vlb=0.001)
    simple, vlb, total = terms.as_floats()
    assert simple > 0 and vlb >= 0
    assert total == pytest.approx(simple + 0.001 * vlb, rel=1e-5)
    plain = simple_loss(denoiser, x0, t, eps, schedule, ChannelWeights())
    assert float(plain) == pytest.approx(simple, rel=1e-6)

    only_simple = hybrid_loss(denoiser, x0, t, eps, schedule, ChannelWeights(), lambda_vlb=0.0)
    assert float(only_simple.vlb) == 0.0
    assert float(only_simple.total) == pytest.approx(simple, rel=1e-6)


def test_vlb_term_only_trains_the_variance_output(denoiser, schedule, corpus):
    x0 = _batch(corpus)
    t = torch.full((4,), 9)
    eps = torch.randn(x0.shape, generator=torch.Generator().manual_seed(1))
    terms = hybrid_loss(denoiser, x0, t, eps, schedule, ChannelWeights(), lambda_vlb=1.0)
    terms.vlb.backward()
    last = denoiser.out[-1]
    assert last.weight.grad[:3].abs().sum() == 0
    assert last.weight.grad[3:].abs().sum() > 0


def test_mask_free_loss_ignores_mask_channels():
    eps = torch.zeros(2, 3, 4, 4)
    out = DenoiserOutput(eps_hat=torch.zeros_like(eps), v=torch.zeros_like(eps))
    out.eps_hat[:, 1:] = 5.0
    assert float(simple_from_output(out, eps, ChannelWeights.mask_free())) == 0.0
    assert float(simple_from_output(out, eps, ChannelWeights())) > 0.0


def test_non_finite_input_raises(denoiser, schedule, corpus):
    x0 = _batch(corpus).clone()
    x0[0, 0, 0, 0] = float("nan")
    with pytest.raises(NumericalError, match="not finite"):
        simple_loss(denoiser, x0, torch.full((4,), 3), torch.zeros_like(x0), schedule, ChannelWeights(), ["a"])


def test_batch_stream_is_seeded(corpus):
    dataset = TripletDataset(corpus.triplets)
    first = [ids for _, _, ids in itertools.islice(batch_stream(dataset, 4, seed=3), 5)]
    again = [ids for _, _, ids in itertools.islice(batch_stream(dataset, 4, seed=3), 5)]
    other = [ids for _, _, ids in itertools.islice(batch_stream(dataset, 4, seed=4), 5)]
    assert first == again
    assert first != other


def _loop_meta() -> CheckpointMeta:
    return CheckpointMeta(kind=CheckpointKind.DOWNSTREAM_CLASSIFIER)


def test_divergence_keeps_last_good_checkpoint(tmp_path):
    model = nn.Linear(2, 1)
    calls = {"n": 0}

    def step(batch):
        calls["n"] += 1
        if calls["n"] == 3:
            raise NumericalError("loss is not finite", {"timesteps": [4]})
        loss = model(torch.ones(1, 2)).pow(2).sum()
        return loss, {"loss": float(loss)}

    config = TrainConfig(iterations=5, checkpoint_every=2, log_every=1)
    path = tmp_path / "model.pt"
    with pytest.raises(TrainingDivergedError) as info:
        run_loop(model, step, itertools.repeat(None), config, _loop_meta(), path, ("loss",))
    assert info.value.last_good_checkpoint == path
    assert info.value.diagnostics["iteration"] == 3
    assert path.exists()
    assert LossHistory.read_csv(tmp_path / "model_loss.csv").series("loss")


def test_non_finite_gradient_aborts(tmp_path):
    model = nn.Linear(2, 1)

    def step(batch):
        loss = (model(torch.ones(1, 2)) * float("inf")).sum()
        return loss, {"loss": 0.0}

    config = TrainConfig(iterations=3, log_every=1)
    with pytest.raises(TrainingDivergedError, match="gradient"):
        run_loop(model, step, itertools.repeat(None), config, _loop_meta(), None, ("loss",))


def test_train_denoiser_writes_checkpoint_and_history(tmp_path, corpus):
    result = train_denoiser(corpus, FAST, TINY_SCHEDULE, TINY_NETWORK, tmp_path)
    assert result.checkpoint.path == tmp_path / "denoiser.pt"
    assert result.checkpoint.meta.iterations_completed == 2
    assert result.checkpoint.meta.weights == ChannelWeights()
    assert len(result.history.rows) == 2
    assert (tmp_path / "denoiser_loss.csv").exists()


def test_train_denoiser_is_deterministic(tmp_path, corpus):
    a = train_denoiser(corpus, FAST, TINY_SCHEDULE, TINY_NETWORK, tmp_path / "a")
    b = train_denoiser(corpus, FAST, TINY_SCHEDULE, TINY_NETWORK, tmp_path / "b")
    assert a.history.rows == b.history.rows
    assert state_digest(torch.load(a.checkpoint.path, weights_only=True)) == state_digest(
        torch.load(b.checkpoint.path, weights_only=True)
    )


def test_train_denoiser_checks_resolution_and_schedule(tmp_path, corpus):
    with pytest.raises(ConfigError, match="resolution"):
        train_denoiser(corpus, FAST, TINY_SCHEDULE, NetworkConfig(image_size=32, base_channels=8), tmp_path)
    with pytest.raises(ConfigError, match="schedule_ref"):
        config = FAST.model_copy(update={"schedule_ref": "0" * 32})
        train_denoiser(corpus, config, TINY_SCHEDULE, TINY_NETWORK, tmp_path)


def test_guidance_classifier_needs_both_classes(tmp_path, corpus):
    normals = corpus.subset(t.id for t in corpus.of_label(Label.NORMAL))
    with pytest.raises(InsufficientDataError):
        train_classifier(normals, FAST, TINY_SCHEDULE, TINY_NETWORK, tmp_path)


def test_guidance_classifier_training_and_accuracy(tmp_path, corpus, schedule):
    result = train_classifier(corpus, FAST, TINY_SCHEDULE, TINY_NETWORK, tmp_path)
    assert result.checkpoint.meta.kind == CheckpointKind.GUIDANCE_CLASSIFIER
    assert result.history.columns == ["cross_entropy", "accuracy"]
    network, _ = load_network(result.checkpoint.path, CheckpointKind.GUIDANCE_CLASSIFIER)
    accuracy = evaluate_classifier_accuracy(network, corpus, schedule, ChannelWeights(), [1, 10, 20])
    assert set(accuracy) == {1, 10, 20}
    assert all(0.0 <= value <= 1.0 for value in accuracy.values())
