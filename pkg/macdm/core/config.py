from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type

from pydantic import Field, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from macdm.core.exceptions import ConfigError
from macdm.core.seeding import derive_seed
from macdm.schemas.dataset import PhantomConfig
from macdm.schemas.diffusion import ScheduleConfig
from macdm.schemas.evaluation import EvaluationConfig
from macdm.schemas.network import NetworkConfig
from macdm.schemas.sampling import GuidanceSpec
from macdm.schemas.training import ChannelWeights, TrainConfig


SEEDED_SECTIONS = ("denoiser", "classifier", "guidance", "downstream", "segmenter")
WEIGHTED_SECTIONS = ("denoiser", "classifier", "guidance")


class Settings(BaseSettings):
    """
    Resolved run configuration.

    Precedence, lowest first: defaults, TOML config file, .env, MACDM_* environment variables
    (nested with `__`, e.g. MACDM_DIFFUSION__TIMESTEPS=100), explicit overrides from the CLI.
    """

    seed: int = 0
    deterministic: bool = True
    device: str = "cpu"
    log_level: str = "INFO"
    progress: bool = True
    database_url: str = "sqlite:///macdm_runs.db"
    runs_dir: Path = Path("runs")

    diffusion: ScheduleConfig = Field(default_factory=ScheduleConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    weights: ChannelWeights = Field(default_factory=ChannelWeights)
    denoiser: TrainConfig = Field(default_factory=lambda: TrainConfig(iterations=3000))
    classifier: TrainConfig = Field(default_factory=lambda: TrainConfig(iterations=2000))
    guidance: GuidanceSpec = Field(default_factory=GuidanceSpec)
    downstream: TrainConfig = Field(
        default_factory=lambda: TrainConfig(iterations=600, batch_size=16, learning_rate=1e-3)
    )
    segmenter: TrainConfig = Field(
        default_factory=lambda: TrainConfig(iterations=800, batch_size=8, learning_rate=1e-3)
    )
    phantoms: PhantomConfig = Field(default_factory=PhantomConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)

    model_config = SettingsConfigDict(
        env_prefix="MACDM_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @model_validator(mode="after")
    def _fan_out(self) -> "Settings":
        # Sections without an explicit seed draw one from the run seed.
        for section in SEEDED_SECTIONS:
            cfg = getattr(self, section)
            if "seed" not in cfg.model_fields_set:
                setattr(self, section, cfg.model_copy(update={"seed": derive_seed(self.seed, section)}))
        # One set of channel weights for every network that sees the noisy stack.
        for section in WEIGHTED_SECTIONS:
            setattr(self, section, getattr(self, section).model_copy(update={"weights": self.weights}))
        return self

    def with_weights(self, weights: ChannelWeights) -> "Settings":
        """Copy with `weights` pushed into every network section (e.g. the mask-free baseline)."""
        update: Dict[str, Any] = {"weights": weights}
        for section in WEIGHTED_SECTIONS:
            update[section] = getattr(self, section).model_copy(update={"weights": weights})
        return self.model_copy(update=update)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings, env_settings, dotenv_settings, TomlConfigSettingsSource(settings_cls))

    def resolved(self) -> Dict[str, Any]:
        """JSON-ready dump echoed into run manifests."""
        return self.model_dump(mode="json")


def load_settings(config_file: Optional[Path] = None, **overrides: Any) -> Settings:
    """
    Build Settings from an optional TOML file plus keyword overrides (nested dicts allowed).

    Validation failures surface as pydantic.ValidationError listing every offending field.
    """
    if config_file is None:
        return Settings(**overrides)
    path = Path(config_file)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    file_settings = type(
        "FileSettings",
        (Settings,),
        {"model_config": SettingsConfigDict(**{**Settings.model_config, "toml_file": path})},
    )
    return file_settings(**overrides)
