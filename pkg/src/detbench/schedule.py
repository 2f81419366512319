"""Training-schedule arithmetic: cosine LR, SGD with momentum, multi-scale
sizes, early stopping and a checkpoint ledger."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import EpochOutOfRange, LengthMismatch, NonMonotoneEpoch

TRAIN_SIZES = tuple(range(320, 641, 32))


@dataclass(frozen=True)
class ScheduleParams:
    eta0: float = 0.01
    total_epochs: int = 300
    batch_size: int = 64
    momentum: float = 0.937
    weight_decay: float = 0.0005

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def lr_at(t: float, p: ScheduleParams = ScheduleParams()) -> float:
    """eta0 * 0.5 * (1 + cos(pi * t / T))"""
    if not 0 <= t <= p.total_epochs:
        raise EpochOutOfRange(f"epoch {t} outside [0, {p.total_epochs}]")
    return p.eta0 * 0.5 * (1.0 + math.cos(t / p.total_epochs * math.pi))


def sgd_step(param, grad, velocity, t: float, p: ScheduleParams = ScheduleParams(),
             lr: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """One SGD update with momentum and coupled weight decay.

    v' = momentum * v - lr * (grad + weight_decay * param);  param' = param + v'
    ``lr`` overrides the cosine-scheduled rate.
    """
    param = np.asarray(param, dtype=float)
    grad = np.asarray(grad, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    if not (param.shape == grad.shape == velocity.shape):
        raise LengthMismatch(f"shapes differ: {param.shape}, {grad.shape}, {velocity.shape}")
    eta = lr_at(t, p) if lr is None else lr
    v_new = p.momentum * velocity - eta * (grad + p.weight_decay * param)
    return param + v_new, v_new


def sample_train_size(rng: np.random.Generator) -> int:
    """Uniform draw from the stride-aligned sizes 320, 352, ..., 640."""
    return TRAIN_SIZES[int(rng.integers(len(TRAIN_SIZES)))]


@dataclass
class EarlyStopState:
    patience: int = 50
    min_delta: float = 1e-4
    best_metric: float = -math.inf
    best_epoch: int = -1
    history: List[Tuple[int, float]] = field(default_factory=list)
    stopped: bool = False

    def __post_init__(self):
        if self.patience < 0:
            raise ValueError("patience must be non-negative")


def early_stop_update(state: EarlyStopState, epoch: int, metric: float) -> Tuple[EarlyStopState, bool]:
    """Record ``metric`` for ``epoch`` (maximize mode) and report whether to stop.

    The state is updated in place and also returned.
    """
    if state.history and epoch <= state.history[-1][0]:
        raise NonMonotoneEpoch(f"epoch {epoch} does not follow {state.history[-1][0]}")
    state.history.append((epoch, metric))
    if state.best_epoch < 0 or metric >= state.best_metric + state.min_delta:
        state.best_metric = metric
        state.best_epoch = epoch
    elif epoch - state.best_epoch >= state.patience:
        state.stopped = True
    return state, state.stopped


@dataclass(frozen=True)
class CheckpointEntry:
    epoch: int
    metric: float
    digest: str
    timestamp: float


class CheckpointLedger:
    """Append-only checkpoint log; ties on the metric keep the earlier epoch."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.entries: List[CheckpointEntry] = []
        self._best: Optional[CheckpointEntry] = None

    def record(self, epoch: int, metric: float, payload_digest, timestamp: Optional[float] = None) -> CheckpointEntry:
        digest = payload_digest.hex() if isinstance(payload_digest, (bytes, bytearray)) else str(payload_digest)
        entry = CheckpointEntry(int(epoch), float(metric), digest, time.time() if timestamp is None else timestamp)
        self.entries.append(entry)
        if self._best is None or entry.metric > self._best.metric:
            self._best = entry
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry.__dict__, sort_keys=True) + "\n")
        return entry

    @property
    def best(self) -> Optional[CheckpointEntry]:
        return self._best

    @classmethod
    def load(cls, path) -> "CheckpointLedger":
        ledger = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                d = json.loads(line)
                ledger.record(d["epoch"], d["metric"], d["digest"], d["timestamp"])
        ledger.path = Path(path)
        return ledger


def checkpoint_record(ledger: CheckpointLedger, epoch: int, metric: float, payload_digest) -> CheckpointEntry:
    return ledger.record(epoch, metric, payload_digest)
