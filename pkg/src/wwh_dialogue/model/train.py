"""Adam training loop over serialized instances.

Batches follow the training-file order for the first epoch (the blend
manifest already shuffled globally); later epochs reshuffle with a seeded
generator. Weight decay is decoupled and applied only to matrices and
embeddings. A non-finite loss aborts immediately with context instead of
silently continuing.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..serialization import TrainingInstance
from .config import ModelConfig, TrainConfig
from .network import decayable, init_params, loss_and_grad

PAD_ID_DEFAULT = 9  # <PAD> position in the fixed special-token order


class TrainAbort(RuntimeError):
    """Training hit a non-finite loss."""


@dataclass
class StepMetrics:
    step: int
    epoch: int
    loss: float
    grad_norm: float
    wall_time: float


@dataclass
class TrainResult:
    params: dict
    metrics: list[StepMetrics] = field(default_factory=list)
    steps: int = 0
    final_loss: float = float("nan")


def pad_batch(instances: list[TrainingInstance], pad_id: int):
    T = max(len(i.input_ids) for i in instances)
    B = len(instances)
    ids = np.full((B, T), pad_id, dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    for r, inst in enumerate(instances):
        ids[r, : len(inst.input_ids)] = inst.input_ids
        mask[r, : len(inst.loss_mask)] = inst.loss_mask
    return ids, mask


def _epoch_order(n: int, epoch: int, seed: int) -> np.ndarray:
    if epoch == 0:
        return np.arange(n)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))
    return rng.permutation(n)


def lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Learning rate for 0-indexed `step` of a `total_steps`-long run."""
    if cfg.lr_schedule == "constant" or total_steps <= 1:
        return cfg.lr
    floor = cfg.lr * cfg.lr_min_frac
    frac = step / (total_steps - 1)
    return floor + 0.5 * (cfg.lr - floor) * (1.0 + math.cos(math.pi * frac))


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params: dict, grads: dict, lr: float | None = None) -> float:
        cfg = self.cfg
        if lr is None:
            lr = cfg.lr
        gnorm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
        scale = 1.0
        if cfg.grad_clip > 0 and gnorm > cfg.grad_clip:
            scale = cfg.grad_clip / gnorm
        self.t += 1
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = grads[name] * scale
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            step = (m / bias1) / (np.sqrt(v / bias2) + cfg.adam_eps)
            if cfg.weight_decay > 0 and decayable(name):
                step = step + cfg.weight_decay * p
            p -= np.asarray(lr * step, dtype=p.dtype)
        return gnorm


def train(
    instances: list[TrainingInstance],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    pad_id: int = PAD_ID_DEFAULT,
    log=None,
    initial_params: dict | None = None,
) -> TrainResult:
    """Run the full loop; deterministic given configs and instance order."""
    if not instances:
        raise ValueError("no training instances")
    params = initial_params if initial_params is not None else init_params(model_cfg)
    opt = Adam(params, train_cfg)
    dropout_rng = (
        np.random.Generator(np.random.PCG64(np.random.SeedSequence([train_cfg.seed, 0xD207])))
        if model_cfg.dropout > 0
        else None
    )
    result = TrainResult(params=params)
    t0 = time.monotonic()
    step = 0
    batches_per_epoch = -(-len(instances) // train_cfg.batch_size)
    total_steps = batches_per_epoch * train_cfg.epochs
    for epoch in range(train_cfg.epochs):
        order = _epoch_order(len(instances), epoch, train_cfg.seed)
        for lo in range(0, len(order), train_cfg.batch_size):
            batch = [instances[i] for i in order[lo : lo + train_cfg.batch_size]]
            ids, mask = pad_batch(batch, pad_id)
            loss, grads = loss_and_grad(params, ids, mask, model_cfg, dropout_rng=dropout_rng)
            if not np.isfinite(loss):
                raise TrainAbort(
                    f"non-finite loss {loss} at step {step} (epoch {epoch}, batch offset {lo}); "
                    f"last finite loss: {result.final_loss}"
                )
            gnorm = opt.update(params, grads, lr=lr_at(train_cfg, step, total_steps))
            step += 1
            result.final_loss = loss
            if step % train_cfg.log_every == 0 or step == 1:
                metric = StepMetrics(step, epoch, loss, gnorm, time.monotonic() - t0)
                result.metrics.append(metric)
                if log is not None:
                    log(metric)
    result.steps = step
    return result
