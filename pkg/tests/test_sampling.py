from __future__ import annotations

import pytest
import torch

from macdm.core.exceptions import TimestepError
from macdm.core.seeding import torch_generator
from macdm.diffusion.enums import SamplerKind
from macdm.diffusion.gaussian import forward_marginal_sample
from macdm.diffusion.schedule import build_schedule
from macdm.networks.inference import DenoiserOutput, NoisyTriplet, classifier_input_gradient
from macdm.sampling.guidance import guidance_correction, guided_eps
from macdm.sampling.samplers import ddim_sigma, ddim_step, ddim_timesteps, ddpm_step, run_chain
from macdm.schemas.sampling import GuidanceSpec
from macdm.schemas.training import ChannelWeights


class _CountingClassifier(torch.nn.Module):
    def __init__(self, inner: torch.nn.Module) -> None:
        super().__init__()
        self.inner = inner
        self.config = inner.config
        self.timesteps = inner.timesteps
        self.calls = 0

    def forward(self, x, t):
        self.calls += 1
        return self.inner(x, t)


def _start_state(seed: int = 0) -> torch.Tensor:
    return torch.randn((2, 3, 16, 16), generator=torch.Generator().manual_seed(seed))


def _generators(seed: int = 0):
    return [torch_generator(seed + i) for i in range(2)]


def test_ddim_timesteps_are_strictly_decreasing_and_end_at_zero():
    steps = ddim_timesteps(80, 10)
    assert steps[0] == 80 and steps[-1] == 0
    assert all(a > b for a, b in zip(steps, steps[1:]))
    assert len(steps) == 11
    assert ddim_timesteps(3, 10) == [3, 2, 1, 0]
    assert ddim_timesteps(0, 10) == []
    with pytest.raises(TimestepError):
        ddim_timesteps(-1, 10)


def test_oracle_ddim_single_step_recovers_x0():
    schedule = build_schedule("linear", 1000, 1e-4, 0.02)
    gen = torch.Generator().manual_seed(7)
    x0 = torch.rand((2, 3, 8, 8), generator=gen, dtype=torch.float64) * 2 - 1
    eps = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
    for t in (1, 250, 800, 1000):
        xt = forward_marginal_sample(x0, t, eps, schedule)
        out = DenoiserOutput(eps_hat=eps, v=torch.zeros_like(eps))
        recovered = ddim_step(xt, out, t, 0, 0.0, schedule)
        assert float((recovered - x0).abs().max()) < 1e-8


def test_deterministic_ddim_needs_no_noise_and_stochastic_does():
    schedule = build_schedule("linear", 100, 1e-3, 0.2)
    xt = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    out = DenoiserOutput(eps_hat=torch.randn_like(xt), v=torch.zeros_like(xt))
    assert ddim_sigma(50, 40, 0.0, schedule) == 0.0
    ddim_step(xt, out, 50, 40, 0.0, schedule)
    with pytest.raises(ValueError):
        ddim_step(xt, out, 50, 40, 0.5, schedule)
    with pytest.raises(TimestepError):
        ddim_step(xt, out, 40, 50, 0.0, schedule)


def test_final_ddpm_step_adds_no_noise(schedule):
    xt = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    out = DenoiserOutput(eps_hat=torch.zeros_like(xt), v=torch.full_like(xt, 0.5))
    a = ddpm_step(xt, out, 1, torch.randn_like(xt), schedule)
    b = ddpm_step(xt, out, 1, torch.randn_like(xt), schedule)
    torch.testing.assert_close(a, b)


def test_guidance_correction_is_linear_in_scale(schedule):
    grad = torch.randn(2, 3, 4, 4)
    one = guidance_correction(grad, 10, 1.0, schedule)
    torch.testing.assert_close(guidance_correction(grad, 10, 3.0, schedule), 3.0 * one)
    expected = (1.0 - schedule.alpha_bar(10)) ** 0.5 * grad
    torch.testing.assert_close(one, expected)
    with pytest.raises(ValueError):
        guidance_correction(grad, 10, -1.0, schedule)


def test_zero_scale_returns_prediction_unchanged(schedule):
    eps = torch.randn(2, 3, 4, 4)
    assert guided_eps(eps, torch.randn_like(eps), 5, 0.0, schedule) is eps


def test_guidance_touches_all_three_channels(schedule):
    eps = torch.zeros(1, 3, 4, 4)
    grad = torch.ones_like(eps)
    guided = guided_eps(eps, grad, 5, 2.0, schedule)
    for channel in range(3):
        assert bool((guided[:, channel] < 0).all())


def test_guided_step_moves_towards_target(classifier, schedule):
    classifier = classifier.double()
    noisy = NoisyTriplet.from_state(_start_state().double(), 10, ChannelWeights())
    grad = classifier_input_gradient(classifier, noisy, 1)
    eps = torch.zeros_like(grad)
    step = -guided_eps(eps, grad, 10, 5.0, schedule)
    # A small move along the corrected direction raises log p(target).
    with torch.no_grad():
        before = classifier(noisy.stack, noisy.t)[:, 1]
        after = classifier(noisy.stack + 1e-3 * step, noisy.t)[:, 1]
    assert bool((after >= before).all())


def test_zero_scale_chain_is_bitwise_unguided(denoiser, classifier, schedule):
    spec = GuidanceSpec(gradient_scale=0.0, ddim_steps=4)
    counting = _CountingClassifier(classifier)
    guided, _ = run_chain(_start_state(), 15, denoiser, schedule, spec, _generators(), counting)
    plain, _ = run_chain(_start_state(), 15, denoiser, schedule, spec, _generators(), None)
    assert torch.equal(guided, plain)
    assert counting.calls == 0


def test_ddim_chain_is_deterministic(denoiser, classifier, schedule):
    spec = GuidanceSpec(gradient_scale=2.0, ddim_steps=4)
    a, trace = run_chain(_start_state(), 15, denoiser, schedule, spec, _generators(), classifier)
    b, _ = run_chain(_start_state(), 15, denoiser, schedule, spec, _generators(), classifier)
    assert torch.equal(a, b)
    assert trace.steps == [15, 10, 6, 1]
    assert len(trace.guidance_norms) == 4


def test_stochastic_chains_depend_on_generators(denoiser, schedule):
    spec = GuidanceSpec(gradient_scale=0.0, sampler=SamplerKind.DDPM)
    a, trace = run_chain(_start_state(), 5, denoiser, schedule, spec, _generators(0))
    b, _ = run_chain(_start_state(), 5, denoiser, schedule, spec, _generators(0))
    c, _ = run_chain(_start_state(), 5, denoiser, schedule, spec, _generators(9))
    assert trace.steps == [5, 4, 3, 2, 1]
    assert torch.equal(a, b)
    assert not torch.equal(a, c)
