from .enums import SamplerKind, ScheduleKind, VarianceMode
from .gaussian import (
    ReverseMoments,
    eps_posterior_mean,
    forward_marginal_sample,
    forward_step_sample,
    posterior_moments,
    predict_x0_from_eps,
    reverse_moments,
)
from .ranges import ImageTensor, binarize_mask, to_model_range, to_unit_range
from .schedule import NoiseSchedule, build_schedule, schedule_from_config

__all__ = [
    "ImageTensor",
    "NoiseSchedule",
    "ReverseMoments",
    "SamplerKind",
    "ScheduleKind",
    "VarianceMode",
    "binarize_mask",
    "build_schedule",
    "eps_posterior_mean",
    "forward_marginal_sample",
    "forward_step_sample",
    "posterior_moments",
    "predict_x0_from_eps",
    "reverse_moments",
    "schedule_from_config",
    "to_model_range",
    "to_unit_range",
]
