"""Tiny decoder-only language model: numpy network, trainer, checkpoints,
decoding."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ModelConfig, TrainConfig
from .generate import (
    DecodeConfig,
    DecodeSession,
    GenerationResult,
    build_prompt_ids,
    generate,
    rtl_slot_logprobs,
    score_batch,
    score_instance,
)
from .network import (
    ModelError,
    cast_params,
    forward,
    init_params,
    log_softmax,
    loss_and_grad,
    masked_token_logprobs,
    nll_loss,
)
from .train import Adam, StepMetrics, TrainAbort, TrainResult, lr_at, pad_batch, train

__all__ = [
    "Adam",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "DecodeConfig",
    "DecodeSession",
    "GenerationResult",
    "ModelConfig",
    "ModelError",
    "StepMetrics",
    "TrainAbort",
    "TrainConfig",
    "TrainResult",
    "build_prompt_ids",
    "cast_params",
    "forward",
    "generate",
    "init_params",
    "load_checkpoint",
    "log_softmax",
    "loss_and_grad",
    "masked_token_logprobs",
    "nll_loss",
    "pad_batch",
    "rtl_slot_logprobs",
    "save_checkpoint",
    "score_batch",
    "score_instance",
    "train",
]
