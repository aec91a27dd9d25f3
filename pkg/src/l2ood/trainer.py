"""Minibatch SGD with momentum, step learning-rate schedule, and per-epoch checkpoints."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .collapse import norm_dispersion
from .datasets import Dataset
from .errors import DivergenceError, LabelError, ShapeError
from .linalg import Rng, RngState
from .model import ModelConfig, ModelParams, backward, forward, init_params, softmax_cross_entropy

log = logging.getLogger(__name__)

INIT_STREAM = 0
SHUFFLE_STREAM = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    base_lr: float = 0.1
    lr_step_epochs: tuple[int, ...] = (70, 85)
    lr_gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    checkpoint_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "lr_step_epochs", tuple(int(e) for e in self.lr_step_epochs))
        if self.epochs < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ValueError("epochs, batch_size and checkpoint_every must be >= 1")
        if not 0.0 < self.lr_gamma <= 1.0:
            raise ValueError("lr_gamma must lie in (0, 1]")
        steps = self.lr_step_epochs
        if any(b <= a for a, b in zip(steps, steps[1:])) or any(s >= self.epochs for s in steps):
            raise ValueError("lr_step_epochs must be strictly increasing and < epochs")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight_decay must be >= 0")


@dataclass(frozen=True)
class Checkpoint:
    epoch: int
    params: ModelParams
    rng_state: RngState
    train_loss: float
    train_acc: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    acc: float
    norm_mean: float
    norm_std: float
    norm_cv: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


class TrainResult(NamedTuple):
    params: ModelParams
    checkpoints: list[Checkpoint]
    log: TrainLog


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for zero-based training epoch ``epoch``."""
    drops = sum(1 for s in cfg.lr_step_epochs if s <= epoch)
    return cfg.base_lr * cfg.lr_gamma**drops


def sgd_step(params: ModelParams, grads, lr: float, momentum: float,
             weight_decay: float, velocity=None):
    """``v <- momentum*v + grad + wd*param``; ``param <- param - lr*v``.

    ``velocity`` is a list of arrays parallel to ``params.arrays()`` (``None``
    means zeros). Returns new params and new velocity; inputs are untouched.
    """
    ps = params.arrays()
    gs = grads.arrays() if hasattr(grads, "arrays") else list(grads)
    vs = velocity if velocity is not None else [np.zeros_like(p) for p in ps]
    if len(gs) != len(ps) or len(vs) != len(ps):
        raise ShapeError("params, grads and velocity differ in length")
    new_p, new_v = [], []
    for p, g, v in zip(ps, gs, vs):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"shape mismatch {p.shape} vs {g.shape} vs {v.shape}")
        v2 = momentum * v + g + weight_decay * p
        new_v.append(v2)
        new_p.append(p - lr * v2)
    return params.with_arrays(new_p), new_v


def evaluate(params: ModelParams, config: ModelConfig, data: Dataset) -> tuple[float, float, np.ndarray]:
    """Full-set loss, accuracy, and recorded norms."""
    tr = forward(params, config, data.x)
    loss, _ = softmax_cross_entropy(tr.logits, data.y)
    acc = float(np.mean(tr.logits.argmax(axis=1) == data.y))
    return loss, acc, tr.recorded_norms


def _record(epoch, lr, params, config, data) -> EpochRecord:
    loss, acc, norms = evaluate(params, config, data)
    mean, std, cv = norm_dispersion(norms[:, None])
    return EpochRecord(epoch, lr, loss, acc, mean, std, cv)


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset: Dataset) -> TrainResult:
    """Run SGD and return final params, checkpoints, and the per-epoch log.

    Checkpoint epoch ``e`` holds the parameters after ``e`` full epochs
    (epoch 0 is the initialization). Every log record is computed on the full
    training set with the end-of-epoch parameters, so it can be replayed
    exactly from the matching checkpoint.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    if dataset.y.min() < 0 or dataset.y.max() >= model_cfg.num_classes:
        raise LabelError("dataset labels out of range for num_classes")
    if dataset.x.shape[1] != model_cfg.input_dim:
        raise ShapeError("dataset width does not match model input_dim")

    params = init_params(model_cfg, Rng(train_cfg.seed, INIT_STREAM))
    shuffle = Rng(train_cfg.seed, SHUFFLE_STREAM)
    velocity = None
    tlog = TrainLog()

    def snap(epoch, rec):
        return Checkpoint(epoch, params, shuffle.snapshot(), rec.loss, rec.acc)

    rec = _record(0, lr_at_epoch(train_cfg, 0), params, model_cfg, dataset)
    tlog.records.append(rec)
    checkpoints = [snap(0, rec)]

    bs = train_cfg.batch_size
    for epoch in range(1, train_cfg.epochs + 1):
        lr = lr_at_epoch(train_cfg, epoch - 1)
        order = shuffle.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            tr = forward(params, model_cfg, dataset.x[idx])
            grads = backward(params, model_cfg, tr, dataset.y[idx])
            if not np.isfinite(grads.loss):
                raise DivergenceError(epoch, grads.loss)
            params, velocity = sgd_step(params, grads, lr, train_cfg.momentum,
                                        train_cfg.weight_decay, velocity)
        rec = _record(epoch, lr, params, model_cfg, dataset)
        if not np.isfinite(rec.loss) or not all(np.all(np.isfinite(a)) for a in params.arrays()):
            raise DivergenceError(epoch, rec.loss)
        tlog.records.append(rec)
        if epoch % train_cfg.checkpoint_every == 0 or epoch == train_cfg.epochs:
            checkpoints.append(snap(epoch, rec))
        log.debug("epoch %d lr=%.4g loss=%.4f acc=%.4f norm=%.3f cv=%.3f",
                  epoch, lr, rec.loss, rec.acc, rec.norm_mean, rec.norm_cv)
    return TrainResult(params, checkpoints, tlog)
