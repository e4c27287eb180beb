"""Semi-supervised contrastive self-training with class prototypes."""
from .estimator import SemiSupConClassifier
from .losses import (
    ContrastiveBatch,
    LossOutput,
    ce_prototype_loss,
    cross_entropy_masked,
    self_loss,
    ssc_loss,
    supcon_loss,
)
from .pseudo import assign_pseudo_labels, prototype_probabilities
from .selftrain import TrainConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ContrastiveBatch",
    "LossOutput",
    "SemiSupConClassifier",
    "TrainConfig",
    "assign_pseudo_labels",
    "ce_prototype_loss",
    "cross_entropy_masked",
    "prototype_probabilities",
    "run_experiment",
    "self_loss",
    "ssc_loss",
    "supcon_loss",
]
