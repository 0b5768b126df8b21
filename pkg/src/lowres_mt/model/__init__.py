"""Numpy Transformer: config, forward/backward, training loop, decoding and checkpoints."""

from .config import ConfigError, EarlyStopPolicy, EarlyStopper, TransformerConfig
from .training import (
    CheckpointError,
    DivergenceError,
    TrainState,
    ValidationResult,
    init_state,
    load_checkpoint,
    noam_lr,
    read_history,
    save_checkpoint,
    train,
    train_step,
    translate,
    validate,
)
from .transformer import backward, forward, init_params, label_smoothed_loss

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DivergenceError",
    "EarlyStopPolicy",
    "EarlyStopper",
    "TrainState",
    "TransformerConfig",
    "ValidationResult",
    "backward",
    "forward",
    "init_params",
    "init_state",
    "label_smoothed_loss",
    "load_checkpoint",
    "noam_lr",
    "read_history",
    "save_checkpoint",
    "train",
    "train_step",
    "translate",
    "validate",
]
