from .loops import JsonlLog, TrainConfig, finetune, pretrain, train_classifier, train_segmenter
from .optim import AdamWConfig, OptimState, adamw_step
from .schedule import ScheduleConfig, finetune_schedule, lr_at, pretrain_schedule

__all__ = [
    "JsonlLog", "TrainConfig", "finetune", "pretrain", "train_classifier", "train_segmenter",
    "AdamWConfig", "OptimState", "adamw_step",
    "ScheduleConfig", "finetune_schedule", "lr_at", "pretrain_schedule",
]
