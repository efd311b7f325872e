from enum import Enum


class ScheduleKind(str, Enum):
    LINEAR = "linear"
    COSINE = "cosine"


class VarianceMode(str, Enum):
    """How the reverse-process variance is chosen."""

    LEARNED_RANGE = "learned_range"  # interpolate log β_t and log β̃_t with the model's v
    FIXED_SMALL = "fixed_small"  # β̃_t
    FIXED_LARGE = "fixed_large"  # β_t


class SamplerKind(str, Enum):
    DDIM = "ddim"
    DDPM = "ddpm"
