from .checkpoint import (
    Checkpoint,
    check_compatible,
    checkpoint_digest,
    load_network,
    load_state,
    save_checkpoint,
    state_digest,
)
from .classifier import NoisyInputClassifier
from .denoiser import MaskConditionedUNet
from .inference import (
    DenoiserOutput,
    NoisyTriplet,
    classifier_forward,
    classifier_input_gradient,
    denoiser_forward,
)

__all__ = [
    "Checkpoint",
    "DenoiserOutput",
    "MaskConditionedUNet",
    "NoisyInputClassifier",
    "NoisyTriplet",
    "check_compatible",
    "checkpoint_digest",
    "classifier_forward",
    "classifier_input_gradient",
    "denoiser_forward",
    "load_network",
    "load_state",
    "save_checkpoint",
    "state_digest",
]
