from .frechet import frechet_distance, frechet_distance_from_stats, fit_gaussian
from .metrics import ConfusionCounts, DiceSummary, classification_metrics, dice
from .downstream import PhantomResNet, train_eval_downstream_classifier
from .segmentation import LesionUNet, train_eval_segmenter
from .reports import MetricsReport, write_report
from .fid import fid_images
from .protocols import (
    Condition,
    run_classification_protocol,
    run_segmentation_protocol,
    scarce_subset,
    sweep_guidance,
)
