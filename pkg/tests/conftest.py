from __future__ import annotations

import os
from pathlib import Path

import pytest
import torch

from macdm.diffusion.schedule import schedule_from_config
from macdm.networks.classifier import NoisyInputClassifier
from macdm.networks.denoiser import MaskConditionedUNet
from macdm.phantoms.generator import generate_corpus
from macdm.sampling.translate import SamplingModels
from macdm.schemas.checkpoint import CheckpointKind, CheckpointMeta
from macdm.schemas.diffusion import ScheduleConfig
from macdm.schemas.network import NetworkConfig
from macdm.schemas.training import ChannelWeights

TINY_NETWORK = NetworkConfig(
    image_size=16, base_channels=8, channel_mults=(1, 2), blocks_per_level=1, attention_heads=2
)
TINY_SCHEDULE = ScheduleConfig(timesteps=20)

TINY_TOML = """\
seed = 5
progress = false

[diffusion]
timesteps = 10

[network]
image_size = 16
base_channels = 8
channel_mults = [1, 2]
blocks_per_level = 1
attention_heads = 2

[denoiser]
iterations = 3
batch_size = 4
checkpoint_every = 2
log_every = 1

[classifier]
iterations = 3
batch_size = 4
log_every = 1

[guidance]
ddim_steps = 3
gradient_scale = 1.0

[downstream]
iterations = 3
batch_size = 4

[segmenter]
iterations = 3
batch_size = 4

[phantoms]
size = 16
n_normal = 8
n_cml = 6
folds = 2
independent_normal = 4
independent_cml = 3

[evaluation]
fid_samples = 4
sweep_scales = [1.0]
sweep_sources = 3
scarce_normal = 4
scarce_cml = 3
"""


def _clear_macdm_env(mp: pytest.MonkeyPatch) -> None:
    for key in list(os.environ):
        if key.startswith("MACDM_"):
            mp.delenv(key)


@pytest.fixture(autouse=True)
def isolated_env(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    """Run every test from an empty directory with no MACDM_* variables or .env file."""
    _clear_macdm_env(monkeypatch)
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def tiny_config(tmp_path: Path) -> Path:
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML, encoding="utf-8")
    return path


@pytest.fixture
def schedule():
    return schedule_from_config(TINY_SCHEDULE)


@pytest.fixture
def denoiser() -> MaskConditionedUNet:
    torch.manual_seed(0)
    return MaskConditionedUNet(TINY_NETWORK, timesteps=TINY_SCHEDULE.timesteps).eval()


@pytest.fixture
def classifier() -> NoisyInputClassifier:
    torch.manual_seed(1)
    return NoisyInputClassifier(TINY_NETWORK, timesteps=TINY_SCHEDULE.timesteps).eval()


def _meta(kind: CheckpointKind, weights: ChannelWeights) -> CheckpointMeta:
    return CheckpointMeta(
        kind=kind, network=TINY_NETWORK.model_dump(mode="json"), schedule=TINY_SCHEDULE, weights=weights
    )


@pytest.fixture
def sampling_models(denoiser, classifier, schedule) -> SamplingModels:
    weights = ChannelWeights()
    return SamplingModels(
        denoiser,
        _meta(CheckpointKind.DENOISER, weights),
        schedule,
        classifier,
        _meta(CheckpointKind.GUIDANCE_CLASSIFIER, weights),
    )


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(n_normal=6, n_cml=4, size=16, seed=11)


@pytest.fixture(scope="session")
def run_cli(tmp_path_factory: pytest.TempPathFactory):
    """Call the CLI entry point from a scratch directory with a clean environment."""
    from macdm.main import main

    workdir = tmp_path_factory.mktemp("cli")

    def run(*argv: str) -> int:
        with pytest.MonkeyPatch.context() as mp:
            _clear_macdm_env(mp)
            mp.chdir(workdir)
            return main([str(a) for a in argv])

    return run
