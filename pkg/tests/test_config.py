from __future__ import annotations

import pytest
from pydantic import ValidationError

from macdm.core.config import SEEDED_SECTIONS, Settings, load_settings
from macdm.core.exceptions import ConfigError
from macdm.core.hashing import config_hash
from macdm.core.seeding import derive_seed
from macdm.schemas.training import ChannelWeights


def test_defaults():
    settings = Settings()
    assert settings.seed == 0
    assert settings.diffusion.timesteps == 200
    assert settings.weights == ChannelWeights(w1=1.0, w2=0.8, w3=0.8)
    assert settings.guidance.resolve_start_step(settings.diffusion.timesteps) == 160
    assert settings.database_url.startswith("sqlite:///")
    assert settings.evaluation.segmentation_test_fraction == pytest.approx(0.2)


def test_toml_file_is_loaded(tiny_config):
    settings = load_settings(tiny_config)
    assert settings.seed == 5
    assert settings.diffusion.timesteps == 10
    assert settings.network.channel_mults == (1, 2)
    assert settings.denoiser.iterations == 3
    assert settings.evaluation.sweep_scales == [1.0]
    assert not settings.progress


def test_missing_config_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(tmp_path / "nope.toml")


def test_environment_overrides_file(tiny_config, monkeypatch):
    monkeypatch.setenv("MACDM_DIFFUSION__TIMESTEPS", "40")
    monkeypatch.setenv("MACDM_SEED", "9")
    settings = load_settings(tiny_config)
    assert settings.diffusion.timesteps == 40
    assert settings.seed == 9
    assert settings.denoiser.iterations == 3


def test_explicit_overrides_beat_environment(tiny_config, monkeypatch):
    monkeypatch.setenv("MACDM_SEED", "9")
    settings = load_settings(tiny_config, seed=12, guidance={"gradient_scale": 0.0})
    assert settings.seed == 12
    assert settings.guidance.gradient_scale == 0.0


def test_dotenv_file_is_read(isolated_env):
    (isolated_env / ".env").write_text("MACDM_DEVICE=cuda:1\n", encoding="utf-8")
    assert Settings().device == "cuda:1"


def test_section_seeds_fan_out_from_run_seed():
    settings = Settings(seed=3)
    for section in SEEDED_SECTIONS:
        assert getattr(settings, section).seed == derive_seed(3, section)
    assert len({getattr(settings, s).seed for s in SEEDED_SECTIONS}) == len(SEEDED_SECTIONS)
    pinned = Settings(seed=3, denoiser={"seed": 77})
    assert pinned.denoiser.seed == 77
    assert pinned.classifier.seed == derive_seed(3, "classifier")


def test_channel_weights_reach_every_network():
    settings = Settings(weights={"w2": 0.0, "w3": 0.0})
    for section in ("denoiser", "classifier", "guidance"):
        assert getattr(settings, section).weights == ChannelWeights.mask_free()


def test_mask_free_copy_keeps_seeds():
    settings = Settings(seed=3)
    baseline = settings.with_weights(ChannelWeights.mask_free())
    assert baseline.weights == ChannelWeights.mask_free()
    for section in ("denoiser", "classifier", "guidance"):
        assert getattr(baseline, section).weights == ChannelWeights.mask_free()
        assert getattr(baseline, section).seed == getattr(settings, section).seed
    assert settings.denoiser.weights == ChannelWeights()


def test_invalid_values_list_the_field():
    with pytest.raises(ValidationError, match="timesteps"):
        Settings(diffusion={"timesteps": 0})
    with pytest.raises(ValidationError, match="beta"):
        Settings(diffusion={"beta_start": 0.05, "beta_end": 0.01})
    with pytest.raises(ValidationError):
        Settings(weights={"w1": 0.0})


def test_resolved_config_hash_is_stable(tiny_config):
    a = load_settings(tiny_config).resolved()
    b = load_settings(tiny_config).resolved()
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(Settings().resolved())
    assert a["diffusion"]["timesteps"] == 10
