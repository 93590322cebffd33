"""Adam optimization of an :class:`ECNUGNN` with early stopping on validation MSE."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .data import WindowedDataset
from .errors import ContractError, TrainingError
from .model import ECNUGNN

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 5
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.1
    # "step": recompute the top-k graph every forward pass; "epoch": once per epoch
    graph_refresh: str = "step"

    def __post_init__(self):
        for name in ("learning_rate", "beta1", "beta2", "val_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ContractError(f"{name} must be in (0, 1), got {v}")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ContractError("patience, max_epochs and batch_size must be >= 1")
        if self.eps <= 0:
            raise ContractError("eps must be positive")
        if self.graph_refresh not in ("step", "epoch"):
            raise ContractError("graph_refresh must be 'step' or 'epoch'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, T.Tensor]) -> AdamState:
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(params: dict[str, T.Tensor], state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place, using each parameter's ``grad``."""
    for name, p in params.items():
        if p.grad is None or not np.isfinite(p.grad).all():
            raise TrainingError(f"non-finite gradient in {name} at step {state.step + 1}")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class FitResult:
    model: ECNUGNN
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")


def evaluate_loss(model: ECNUGNN, data: WindowedDataset, batch_size: int = 256) -> float:
    """Mean squared error over every (window, sensor) pair."""
    pred = model.predict(data.inputs, batch_size=batch_size)
    diff = pred - data.targets
    return float(np.mean(diff * diff))


def fit(
    model: ECNUGNN,
    train: WindowedDataset,
    val: WindowedDataset,
    config: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> FitResult:
    """Train ``model`` in place and leave it holding the best-validation snapshot.

    Each epoch visits the training windows in a seeded shuffled order in
    mini-batches. Training stops after ``patience`` consecutive epochs
    without validation improvement, or at ``max_epochs``.

    Raises:
        TrainingError: on a non-finite loss or gradient; ``snapshot`` carries
            the best state recorded so far (the model is restored to it).
    """
    if len(train) == 0 or len(val) == 0:
        raise ContractError("training and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    state = AdamState.zeros_like(params)
    result = FitResult(model=model)
    best_state = model.state_dict()
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        if config.graph_refresh == "epoch":
            model.frozen_adjacency = None
            model.frozen_adjacency = model.graph()
        order = rng.permutation(len(train))
        total, count = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            idx = np.sort(order[lo : lo + config.batch_size])
            model.zero_grads()
            loss = model.loss(train.inputs[idx], train.targets[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                model.load_state_dict(best_state)
                raise TrainingError(f"non-finite loss at epoch {epoch}", snapshot=best_state)
            T.backward(loss)
            try:
                adam_step(params, state, config)
            except TrainingError as exc:
                model.load_state_dict(best_state)
                raise TrainingError(f"epoch {epoch}: {exc}", snapshot=best_state) from None
            total += value * len(idx)
            count += len(idx)
        model.frozen_adjacency = None
        val_loss = evaluate_loss(model, val)
        record = EpochRecord(epoch, total / count, val_loss, time.perf_counter() - started)
        result.history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        log.debug("epoch %d train %.6f val %.6f", epoch, record.train_loss, val_loss)
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_state = model.state_dict()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state_dict(best_state)
    return result
