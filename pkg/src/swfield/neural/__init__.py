from swfield.neural.checkpoint import load_checkpoint, save_checkpoint
from swfield.neural.heads import (
    TABLE2_WIDTHS,
    HeadConfig,
    HeadConfigError,
    dropout_masks,
    head_backward,
    head_forward,
    init_head,
)
from swfield.neural.losses import cross_entropy, focal_loss, log_softmax, softmax
from swfield.neural.optim import (
    AdamState,
    CosineScheduler,
    NonFiniteGradientError,
    PlateauScheduler,
    adam_step,
    make_scheduler,
    scheduler_step,
)

__all__ = [
    "TABLE2_WIDTHS", "HeadConfig", "HeadConfigError", "dropout_masks", "head_backward",
    "head_forward", "init_head", "cross_entropy", "focal_loss", "log_softmax", "softmax",
    "AdamState", "CosineScheduler", "NonFiniteGradientError", "PlateauScheduler", "adam_step",
    "make_scheduler", "scheduler_step", "load_checkpoint", "save_checkpoint",
]
