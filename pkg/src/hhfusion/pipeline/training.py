"""Mini-batch Adam training with early stopping and checkpoint averaging."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError
from ..nn import Adam, Parameter
from ..tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    patience: int = 20
    checkpoint_average_k: int = 3
    lambda1: float = 0.3
    lambda2: float = 0.01
    max_epochs: int = 500

    def __post_init__(self):
        for name in ("lr", "batch_size", "patience", "checkpoint_average_k", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.lambda1 <= 1.0:
            raise ConfigError(f"train.lambda1 must lie in [0, 1], got {self.lambda1}")
        if self.lambda2 < 0:
            raise ConfigError(f"train.lambda2 must be non-negative, got {self.lambda2}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    valid_accuracy: float
    valid_loss: float
    state: Optional[Dict[str, np.ndarray]] = None

    def key(self):
        return (self.valid_accuracy, -self.valid_loss)


@dataclass
class AveragedCheckpoint:
    state: Dict[str, np.ndarray]
    stop_epoch: int
    epochs: List[int]
    warnings: List[str] = field(default_factory=list)


def stopping_epoch(history: Sequence[EpochRecord], patience: int) -> int:
    """Epoch at which ``patience`` epochs have passed without improvement (or the last one)."""
    best = None
    stale = 0
    for rec in history:
        if best is None or rec.key() > best.key():
            best, stale = rec, 0
        else:
            stale += 1
            if stale >= patience:
                return rec.epoch
    return history[-1].epoch if history else 0


def top_k(records: Sequence[EpochRecord], k: int) -> List[EpochRecord]:
    return sorted(records, key=lambda r: (r.valid_accuracy, -r.valid_loss, -r.epoch), reverse=True)[:k]


def average_states(states: Sequence[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    names = list(states[0])
    return {n: np.mean([s[n] for s in states], axis=0) for n in names}


def early_stop_and_average(history: Sequence[EpochRecord], k: int, patience: int) -> AveragedCheckpoint:
    """Truncate at the early-stopping point and average the ``k`` best checkpoints."""
    if not history:
        raise ConfigError("cannot average an empty checkpoint history")
    stop = stopping_epoch(history, patience)
    kept = [r for r in history if r.epoch <= stop and r.state is not None]
    warnings = []
    if len(kept) < k:
        warnings.append(f"only {len(kept)} checkpoint(s) available for averaging, wanted {k}")
        logger.warning(warnings[-1])
    best = top_k(kept, k)
    return AveragedCheckpoint(average_states([r.state for r in best]), stop, [r.epoch for r in best], warnings)


@dataclass
class FitResult:
    history: List[EpochRecord]
    initial: Tuple[float, float]
    final: Tuple[float, float]
    averaged: AveragedCheckpoint
    steps: int


def fit(params: Dict[str, Parameter], batch_loss: Callable[[np.ndarray], Tensor],
        evaluate: Callable[[], Tuple[float, float]], n_train: int, cfg: TrainConfig,
        rng: np.random.Generator) -> FitResult:
    """Train ``params`` in place; leaves them at the averaged best checkpoint.

    ``batch_loss`` maps a batch of training indices to a scalar loss;
    ``evaluate`` returns ``(validation accuracy, validation loss)``.
    """
    opt = Adam(params.values(), lr=cfg.lr)
    with no_grad():
        initial = evaluate()
    history: List[EpochRecord] = []
    best: Optional[EpochRecord] = None
    stale = 0
    steps = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            opt.zero_grad()
            loss = batch_loss(order[start : start + cfg.batch_size])
            loss.backward()
            opt.step()
            steps += 1
        with no_grad():
            acc, vloss = evaluate()
        rec = EpochRecord(epoch, acc, vloss, {n: p.data.copy() for n, p in params.items()})
        history.append(rec)
        keep = {id(r) for r in top_k([r for r in history if r.state is not None], cfg.checkpoint_average_k)}
        for r in history:
            if r.state is not None and id(r) not in keep:
                r.state = None
        if best is None or rec.key() > best.key():
            best, stale = rec, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    averaged = early_stop_and_average(history, cfg.checkpoint_average_k, cfg.patience)
    for name, p in params.items():
        p.data = averaged.state[name].copy()
        p.grad = None
    with no_grad():
        final = evaluate()
    return FitResult(history, initial, final, averaged, steps)
