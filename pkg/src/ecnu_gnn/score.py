"""Graph deviation scoring, smoothing, thresholding and detection metrics.

Per-sensor absolute prediction errors are robust-normalized with the median
and IQR of validation-period errors, the maximum over sensors gives the
anomaly score, a trailing moving average smooths it, and a threshold turns
it into binary decisions. No point adjustment is applied anywhere.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError

IQR_FLOOR_RATIO = 1e-2
IQR_FLOOR_MIN = 1e-8


@dataclass
class RobustStats:
    median: np.ndarray
    iqr: np.ndarray  # already floored

    def to_dict(self) -> dict:
        return {"median": self.median.tolist(), "iqr": self.iqr.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> RobustStats:
        return cls(np.asarray(d["median"], dtype=np.float64), np.asarray(d["iqr"], dtype=np.float64))


@dataclass
class ScoreSeries:
    err: np.ndarray  # (T, N)
    normalized: np.ndarray  # (T, N)
    score: np.ndarray  # (T,)  max over sensors
    argmax: np.ndarray  # (T,)
    smoothed: np.ndarray  # (T,)


@dataclass
class DetectionReport:
    threshold: float
    predicted: np.ndarray
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    warning: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "threshold": float(self.threshold),
            "tp": int(self.tp),
            "fp": int(self.fp),
            "fn": int(self.fn),
            "precision": float(self.precision),
            "recall": float(self.recall),
            "f1": float(self.f1),
            "n_predicted": int(self.predicted.sum()),
            "warning": self.warning,
        }
        d.update(self.extra)
        return d


def abs_error(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"abs_error shape mismatch: {pred.shape} vs {truth.shape}")
    return np.abs(truth - pred)


def fit_robust_stats(val_errors) -> RobustStats:
    """Per-sensor median and floored IQR of a (T, N) validation error matrix.

    Quantiles use linear interpolation. The IQR floor is
    ``max(1e-2 * median of all IQRs, 1e-8)``.
    """
    err = np.asarray(val_errors, dtype=np.float64)
    if err.ndim == 1:
        err = err[:, None]
    if err.shape[0] < 4:
        raise ContractError(f"need at least 4 validation timesteps, got {err.shape[0]}")
    q1, med, q3 = np.quantile(err, [0.25, 0.5, 0.75], axis=0, method="linear")
    iqr = q3 - q1
    floor = max(IQR_FLOOR_RATIO * float(np.median(iqr)), IQR_FLOOR_MIN)
    return RobustStats(median=med, iqr=np.maximum(iqr, floor))


def normalize(err_t, stats: RobustStats) -> np.ndarray:
    """Robust z-score ``(err - median) / iqr``; works on (N,) or (T, N)."""
    return (np.asarray(err_t, dtype=np.float64) - stats.median) / stats.iqr


def aggregate_max(a_t) -> tuple[float, int]:
    """Largest normalized deviation and the (lowest) sensor index attaining it."""
    a_t = np.asarray(a_t, dtype=np.float64)
    if a_t.size == 0:
        raise ContractError("aggregate_max of an empty vector")
    i = int(np.argmax(a_t))
    return float(a_t[i]), i


def sma(series, m: int) -> np.ndarray:
    """Trailing mean over the last ``min(m, t + 1)`` values."""
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ContractError(f"SMA window must be a positive integer, got {m!r}")
    x = np.asarray(series, dtype=np.float64)
    out = np.empty_like(x)
    warm = min(m - 1, x.size)
    for t in range(warm):
        out[t] = x[: t + 1].mean()
    if x.size >= m:
        out[m - 1 :] = np.lib.stride_tricks.sliding_window_view(x, m).mean(axis=1)
    return out


def score_series(pred, truth, stats: RobustStats, sma_window: int = 3) -> ScoreSeries:
    """Full GDS pipeline over (T, N) predictions and observations."""
    err = abs_error(pred, truth)
    if err.ndim != 2 or err.shape[1] != stats.median.shape[0]:
        raise DimensionError(
            f"errors of shape {err.shape} do not match {stats.median.shape[0]} sensors"
        )
    a = normalize(err, stats)
    argmax = np.argmax(a, axis=1)
    score = a[np.arange(a.shape[0]), argmax]
    return ScoreSeries(err=err, normalized=a, score=score, argmax=argmax, smoothed=sma(score, sma_window))


def _check_binary(x, what: str) -> np.ndarray:
    x = np.asarray(x)
    if not np.isin(x, (0, 1)).all():
        raise ContractError(f"{what} must be binary")
    return x.astype(np.int64)


def confusion(pred_labels, true_labels) -> tuple[int, int, int]:
    pred = _check_binary(pred_labels, "predicted labels")
    true = _check_binary(true_labels, "true labels")
    if pred.shape != true.shape:
        raise DimensionError(f"label length mismatch: {pred.shape} vs {true.shape}")
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    return tp, fp, fn


def _ratios(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def metrics(pred_labels, true_labels) -> tuple[float, float, float]:
    """Point-wise precision, recall and F1; 0/0 is taken as 0."""
    return _ratios(*confusion(pred_labels, true_labels))


def _degenerate_warning(labels: np.ndarray) -> str | None:
    if labels.size and labels.min() == labels.max():
        kind = "anomalous" if labels[0] == 1 else "normal"
        msg = f"all labels are {kind}; precision/recall/F1 are degenerate"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return msg
    return None


def evaluate_threshold(scores, labels, threshold: float) -> DetectionReport:
    """Flag ``score > threshold`` and compare against ``labels``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels, "labels")
    pred = (scores > threshold).astype(np.int64)
    tp, fp, fn = confusion(pred, labels)
    p, r, f = _ratios(tp, fp, fn)
    return DetectionReport(threshold=float(threshold), predicted=pred, tp=tp, fp=fp, fn=fn,
                           precision=p, recall=r, f1=f)


def threshold_candidates(scores, grid_size: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    grid = np.linspace(scores.min(), scores.max(), grid_size)
    distinct = np.unique(scores)
    if distinct.size <= 10 * grid_size:
        grid = np.union1d(grid, distinct)
    return np.unique(grid)


def grid_search_threshold(scores, labels, grid_size: int = 400) -> DetectionReport:
    """Threshold maximizing F1 over a grid (lowest threshold wins ties).

    Candidates are ``grid_size`` evenly spaced values over the score range,
    plus every distinct score when there are at most ``10 * grid_size`` of them.
    """
    if grid_size < 2:
        raise ContractError(f"grid_size must be >= 2, got {grid_size}")
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels, "labels")
    if scores.shape != labels.shape or scores.size == 0:
        raise DimensionError(f"scores {scores.shape} and labels {labels.shape} must match and be non-empty")
    warning = _degenerate_warning(labels)
    candidates = threshold_candidates(scores, grid_size)
    # Vectorized confusion counts: sort scores once, count how many exceed each candidate.
    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    pos_cum = np.concatenate([[0], np.cumsum(labels[order])])
    n_pos = int(labels.sum())
    n = scores.size
    idx = np.searchsorted(s_sorted, candidates, side="right")
    tp = n_pos - pos_cum[idx]
    n_flagged = n - idx
    fp = n_flagged - tp
    fn = n_pos - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    best = int(np.argmax(f1))  # first maximum = lowest threshold
    report = evaluate_threshold(scores, labels, candidates[best])
    report.warning = warning
    return report


# -- export ----------------------------------------------------------------


def write_scores_csv(path, timestamps, series: ScoreSeries, sensor_names=None, per_sensor: bool = False) -> None:
    header = ["time", "A", "A_smooth", "argmax_sensor"]
    if per_sensor:
        names = sensor_names or [str(i) for i in range(series.normalized.shape[1])]
        header += [f"a_{n}" for n in names]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in range(series.score.shape[0]):
            row = [str(int(timestamps[t])), repr(float(series.score[t])),
                   repr(float(series.smoothed[t])), str(int(series.argmax[t]))]
            if per_sensor:
                row += [repr(float(v)) for v in series.normalized[t]]
            writer.writerow(row)


def write_report(path, report: DetectionReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
