"""Library-level train and detect steps shared by the CLI and the tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import score
from .data import RawSeries, WindowedDataset, make_windows, split_train_val
from .errors import ContractError, DataError
from .model import ECNUGNN, ModelConfig
from .score import DetectionReport, RobustStats, ScoreSeries
from .train import EpochRecord, FitResult, TrainConfig, fit


@dataclass
class TrainedRun:
    model: ECNUGNN
    fit: FitResult
    robust_stats: RobustStats
    train: WindowedDataset
    val: WindowedDataset


@dataclass
class Detection:
    windows: WindowedDataset
    scores: ScoreSeries
    report: DetectionReport | None


def _check_series(series: RawSeries) -> None:
    if np.isnan(series.values).any():
        raise DataError("series still has missing values; run preprocessing first")


def train_model(
    series: RawSeries,
    model_config: ModelConfig,
    train_config: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainedRun:
    """Window, split, fit, then fit robust error statistics on the validation split."""
    _check_series(series)
    if series.n_steps < model_config.window + 2:
        raise DataError(f"{series.n_steps} steps cannot fill a train and a validation window")
    windows = make_windows(series, model_config.window)
    train, val = split_train_val(windows, train_config.val_fraction)
    model = ECNUGNN(model_config, series.n_sensors, seed=train_config.seed)
    result = fit(model, train, val, train_config, on_epoch=on_epoch)
    stats = score.fit_robust_stats(score.abs_error(model.predict(val.inputs), val.targets))
    return TrainedRun(model, result, stats, train, val)


def score_windows(
    predictions: np.ndarray,
    windows: WindowedDataset,
    stats: RobustStats,
    sma_window: int = 3,
    grid_size: int = 400,
    threshold: float | None = None,
) -> Detection:
    """Score predictions and threshold them.

    With ``threshold`` given it is applied as is; otherwise the labels are
    required and the threshold is grid-searched. The report is None only
    when there are no labels and a fixed threshold is used.
    """
    series = score.score_series(predictions, windows.targets, stats, sma_window)
    if threshold is None:
        if windows.labels is None:
            raise ContractError("test data has no labels; pass a fixed threshold")
        report = score.grid_search_threshold(series.smoothed, windows.labels, grid_size)
    elif windows.labels is not None:
        report = score.evaluate_threshold(series.smoothed, windows.labels, threshold)
    else:
        report = None
    return Detection(windows, series, report)


def detect(
    model: ECNUGNN,
    stats: RobustStats,
    series: RawSeries,
    sma_window: int = 3,
    grid_size: int = 400,
    threshold: float | None = None,
) -> Detection:
    _check_series(series)
    if series.n_sensors != model.n_nodes:
        raise DataError(f"test data has {series.n_sensors} sensors, model expects {model.n_nodes}")
    windows = make_windows(series, model.config.window)
    return score_windows(model.predict(windows.inputs), windows, stats, sma_window, grid_size, threshold)


def persistence_baseline(
    train_series: RawSeries,
    test_series: RawSeries,
    window: int,
    val_fraction: float = 0.1,
    sma_window: int = 3,
    grid_size: int = 400,
) -> Detection:
    """Same scoring, with each sensor's last observed value as the prediction."""
    windows = make_windows(train_series, window)
    _, val = split_train_val(windows, val_fraction)
    stats = score.fit_robust_stats(score.abs_error(val.inputs[:, :, -1], val.targets))
    test = make_windows(test_series, window)
    return score_windows(test.inputs[:, :, -1], test, stats, sma_window, grid_size)
