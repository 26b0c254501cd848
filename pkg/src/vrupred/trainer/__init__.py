"""Training loop, metrics, synthetic scenarios and evaluation harness."""
from .loop import TrainConfig, TrainingDivergedError, TrainResult, ade_loss, train
from .metrics import MetricsReport, ade, ade_per_example, displacement_at
from .optim import Adam, lr_schedule

__all__ = [
    "TrainConfig", "TrainResult", "TrainingDivergedError", "train", "ade_loss", "Adam", "lr_schedule",
    "MetricsReport", "ade", "ade_per_example", "displacement_at",
]
