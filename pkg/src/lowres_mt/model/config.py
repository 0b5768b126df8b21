from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TransformerConfig:
    """Model and optimisation hyperparameters.

    Defaults are the best values found on a ~52k-pair corpus; a corpus of
    ~88k pairs preferred ``heads=8``. ``learning_rate_scale`` multiplies a
    Noam schedule rather than being a raw step size.
    """

    learning_rate_scale: float = 2.0
    batch_tokens: int = 2048
    heads: int = 2
    layers: int = 6
    ff_dim: int = 2048
    embed_dim: int = 256
    label_smoothing: float = 0.1
    dropout: float = 0.3
    attention_dropout: float = 0.1
    average_decay: float = 0.0001
    vocab_size: int = 16000
    max_len: int = 128
    seed: int = 0

    warmup_steps: int = 8000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.998
    adam_eps: float = 1e-9
    max_grad_norm: float = 5.0
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        if self.layers < 1 or self.heads < 1 or self.embed_dim < 1 or self.ff_dim < 1:
            raise ConfigError("layers, heads, embed_dim and ff_dim must be positive")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        for name in ("dropout", "attention_dropout"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if not 0 <= self.average_decay <= 1:
            raise ConfigError("average_decay must lie in [0, 1]")
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must leave room for the special tokens")
        if self.max_len < 2:
            raise ConfigError("max_len must be at least 2")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")

    def replace(self, **changes) -> "TransformerConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class EarlyStopPolicy:
    metric: str = "val_accuracy"  # or "val_ppl"
    patience: int = 4
    validation_interval: int = 500

    def __post_init__(self):
        if self.metric not in ("val_accuracy", "val_ppl"):
            raise ConfigError(f"unknown early-stop metric {self.metric!r}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.validation_interval < 1:
            raise ConfigError("validation_interval must be >= 1")


@dataclass
class EarlyStopper:
    """Counts consecutive validations without strict improvement."""

    policy: EarlyStopPolicy = field(default_factory=EarlyStopPolicy)
    best: float | None = None
    bad_rounds: int = 0

    def improved(self, value: float) -> bool:
        if self.best is None:
            return True
        if self.policy.metric == "val_ppl":
            return value < self.best
        return value > self.best

    def update(self, value: float) -> bool:
        """Record one validation; returns True when training should stop."""
        if self.improved(value):
            self.best = value
            self.bad_rounds = 0
        else:
            self.bad_rounds += 1
        return self.bad_rounds >= self.policy.patience
