from .classifier import evaluate_classifier_accuracy, train_classifier
from .denoiser import train_denoiser
from .losses import LossTerms, hybrid_loss, normal_kl, simple_loss, vlb_term
from .loop import LossHistory, TrainingResult

__all__ = [
    "LossHistory",
    "LossTerms",
    "TrainingResult",
    "evaluate_classifier_accuracy",
    "hybrid_loss",
    "normal_kl",
    "simple_loss",
    "train_classifier",
    "train_denoiser",
    "vlb_term",
]
