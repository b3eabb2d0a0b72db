"""Model and training hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_layers: int = 2
    d_model: int = 128
    n_heads: int = 4
    ffn_mult: int = 4
    max_seq_len: int = 256
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_ffn(self) -> int:
        return self.d_model * self.ffn_mult

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


@dataclass(frozen=True)
class TrainConfig:
    # lr deviates from the published fine-tuning rate on purpose: training a
    # tiny model from scratch needs a much larger step than adapting an 18B one
    lr: float = 3e-4
    batch_size: int = 8
    epochs: int = 1
    weight_decay: float = 0.1
    grad_clip: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    log_every: int = 20
    # "constant" keeps lr fixed; "cosine" anneals from lr to lr * lr_min_frac
    # over the whole run, which settles late training instead of letting large
    # steps keep trading one learned behavior against another
    lr_schedule: str = "constant"
    lr_min_frac: float = 0.1

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0.0 <= self.lr_min_frac <= 1.0:
            raise ConfigError("lr_min_frac must be in [0, 1]")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)
