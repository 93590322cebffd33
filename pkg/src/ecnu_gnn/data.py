"""Loading, preprocessing and windowing of multivariate sensor series.

The preprocessing order is fixed: trim the start-up period, median
downsample, mean-impute, min-max scale with train statistics, then cut
sliding windows.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError, ParseError

LABEL_COLUMN = "label"
TIME_COLUMN = "time"


@dataclass
class RawSeries:
    """N sensors over T ticks. Missing readings are NaN."""

    sensor_names: list[str]
    values: np.ndarray  # (N, T)
    labels: np.ndarray | None = None  # (T,) in {0, 1}
    ticks: np.ndarray | None = None  # (T,) original integer time index

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractError(f"values must be (N, T), got {self.values.shape}")
        if len(self.sensor_names) != self.values.shape[0]:
            raise ContractError(
                f"{len(self.sensor_names)} names for {self.values.shape[0]} sensors"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n_steps,):
                raise ContractError(f"labels must have length {self.n_steps}")
            if not np.isin(self.labels, (0, 1)).all():
                raise ContractError("labels must be 0 or 1")
        if self.ticks is None:
            self.ticks = np.arange(self.n_steps, dtype=np.int64)
        else:
            self.ticks = np.asarray(self.ticks, dtype=np.int64)
            if self.ticks.shape != (self.n_steps,):
                raise ContractError(f"ticks must have length {self.n_steps}")

    @property
    def n_sensors(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)


@dataclass
class WindowedDataset:
    """Sliding-window (input, target) pairs.

    ``inputs[i]`` holds the ``window`` columns immediately preceding
    ``targets[i]``; ``timestamps[i]`` is the tick of the target column.
    """

    inputs: np.ndarray  # (M, N, w)
    targets: np.ndarray  # (M, N)
    timestamps: np.ndarray  # (M,)
    window: int
    labels: np.ndarray | None = None  # (M,)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, index) -> WindowedDataset:
        return WindowedDataset(
            inputs=self.inputs[index],
            targets=self.targets[index],
            timestamps=self.timestamps[index],
            window=self.window,
            labels=None if self.labels is None else self.labels[index],
        )


@dataclass
class NormStats:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if (self.maximum < self.minimum).any():
            raise ContractError("max < min for some sensor")

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> NormStats:
        return cls(np.array(d["min"], dtype=np.float64), np.array(d["max"], dtype=np.float64))


# -- CSV ------------------------------------------------------------------


def load_csv(path) -> RawSeries:
    """Parse a sensor CSV.

    The header names the sensors. An optional leading ``time`` column holds
    integer ticks and an optional trailing ``label`` column holds 0/1 labels.
    Empty cells (or ``nan``) are missing readings.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}:1: missing header row") from None
        header = [h.strip() for h in header]
        if not header or header == [""]:
            raise ParseError(f"{path}:1: missing header row")
        has_time = header[0] == TIME_COLUMN
        has_label = header[-1] == LABEL_COLUMN
        names = header[int(has_time) : len(header) - int(has_label)]
        if not names:
            raise ParseError(f"{path}:1: no sensor columns")
        for h in names:
            try:
                float(h)
            except ValueError:
                continue
            raise ParseError(f"{path}:1: header looks numeric ({h!r}); missing header row?")
        rows, labels, ticks = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            if has_time:
                try:
                    ticks.append(int(row[0]))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad time value {row[0]!r}") from None
            if has_label:
                cell = row[-1].strip()
                try:
                    lab = int(float(cell))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad label {cell!r}") from None
                if lab not in (0, 1):
                    raise ParseError(f"{path}:{lineno}: label must be 0 or 1, got {cell!r}")
                labels.append(lab)
            values = []
            for col, cell in enumerate(row[int(has_time) : len(row) - int(has_label)]):
                cell = cell.strip()
                if cell == "":
                    values.append(math.nan)
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in column {names[col]!r}"
                    ) from None
            rows.append(values)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names)).T
    return RawSeries(
        sensor_names=names,
        values=values,
        labels=np.array(labels, dtype=np.int64) if has_label else None,
        ticks=np.array(ticks, dtype=np.int64) if has_time else None,
    )


def save_csv(series: RawSeries, path, include_time: bool = True) -> None:
    """Write ``series`` so that :func:`load_csv` recovers it bit for bit."""
    header = ([TIME_COLUMN] if include_time else []) + list(series.sensor_names)
    if series.labels is not None:
        header.append(LABEL_COLUMN)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in range(series.n_steps):
            row = [str(int(series.ticks[t]))] if include_time else []
            row += ["" if math.isnan(v) else repr(float(v)) for v in series.values[:, t]]
            if series.labels is not None:
                row.append(str(int(series.labels[t])))
            writer.writerow(row)


# -- preprocessing ---------------------------------------------------------


def trim_head(series: RawSeries, n: int) -> RawSeries:
    """Drop the first ``n`` ticks (unstable start-up period)."""
    if n < 0 or n >= series.n_steps:
        raise ContractError(f"trim count must be in [0, {series.n_steps}), got {n}")
    return RawSeries(
        sensor_names=list(series.sensor_names),
        values=series.values[:, n:].copy(),
        labels=None if series.labels is None else series.labels[n:].copy(),
        ticks=series.ticks[n:].copy(),
    )


def downsample_median(series: RawSeries, factor: int) -> RawSeries:
    """Collapse non-overlapping blocks of ``factor`` ticks.

    Values become the per-sensor block median (ignoring missing readings),
    labels the block majority with ties going to 1, ticks the block's first
    tick. A trailing partial block is kept.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ContractError(f"downsample factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return replace(series, values=series.values.copy())
    starts = np.arange(0, series.n_steps, factor)
    values = np.empty((series.n_sensors, len(starts)))
    labels = None if series.labels is None else np.empty(len(starts), dtype=np.int64)
    for b, lo in enumerate(starts):
        block = series.values[:, lo : lo + factor]
        observed = ~np.isnan(block)
        for s in range(series.n_sensors):
            vals = block[s, observed[s]]
            values[s, b] = np.median(vals) if vals.size else math.nan
        if labels is not None:
            lab = series.labels[lo : lo + factor]
            labels[b] = int(2 * lab.sum() >= lab.size)
    return RawSeries(
        sensor_names=list(series.sensor_names),
        values=values,
        labels=labels,
        ticks=series.ticks[starts].copy(),
    )


def impute_mean(series: RawSeries) -> RawSeries:
    """Fill missing readings with the sensor's mean over observed ticks."""
    values = series.values.copy()
    missing = np.isnan(values)
    for s in np.flatnonzero(missing.any(axis=1)):
        observed = values[s, ~missing[s]]
        if observed.size == 0:
            raise DataError(f"sensor {series.sensor_names[s]!r} has no observed values")
        values[s, missing[s]] = observed.mean()
    return replace(series, values=values)


def fit_minmax(train: RawSeries) -> NormStats:
    if np.isnan(train.values).any():
        raise DataError("fit_minmax needs imputed data")
    return NormStats(train.values.min(axis=1), train.values.max(axis=1))


def apply_minmax(series: RawSeries, stats: NormStats) -> RawSeries:
    """Map each sensor to ``(x - min) / (max - min)``; constant sensors map to 0.

    Values outside the train range are not clipped.
    """
    if stats.minimum.shape != (series.n_sensors,):
        raise DataError(
            f"normalization stats cover {stats.minimum.shape[0]} sensors, series has {series.n_sensors}"
        )
    span = stats.maximum - stats.minimum
    constant = span == 0
    scaled = (series.values - stats.minimum[:, None]) / np.where(constant, 1.0, span)[:, None]
    scaled[constant] = 0.0
    return replace(series, values=scaled)


@dataclass(frozen=True)
class PreprocessConfig:
    trim_head: int = 0
    downsample: int = 1
    normalize: bool = True

    def __post_init__(self):
        if not isinstance(self.trim_head, (int, np.integer)) or self.trim_head < 0:
            raise ContractError(f"trim_head must be a non-negative integer, got {self.trim_head!r}")
        if not isinstance(self.downsample, (int, np.integer)) or self.downsample < 1:
            raise ContractError(f"downsample must be a positive integer, got {self.downsample!r}")

    def to_dict(self) -> dict:
        return {"trim_head": self.trim_head, "downsample": self.downsample, "normalize": self.normalize}


def preprocess(
    series: RawSeries, config: PreprocessConfig, stats: NormStats | None = None
) -> tuple[RawSeries, NormStats | None]:
    """Run trim, downsample, impute and min-max scaling in that order.

    When ``stats`` is None and normalization is on, they are fitted on the
    (trimmed, downsampled, imputed) input itself.
    """
    out = trim_head(series, config.trim_head) if config.trim_head else series
    out = downsample_median(out, config.downsample)
    out = impute_mean(out)
    if config.normalize:
        stats = fit_minmax(out) if stats is None else stats
        out = apply_minmax(out, stats)
    return out, stats


def write_sidecar(path, config: PreprocessConfig, stats: NormStats | None, extra: dict | None = None) -> Path:
    """Record preprocessing parameters next to a processed CSV."""
    sidecar = Path(str(path) + ".meta.json")
    meta = {"preprocess": config.to_dict(), "norm_stats": None if stats is None else stats.to_dict()}
    if extra:
        meta.update(extra)
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_sidecar(path) -> tuple[PreprocessConfig, NormStats | None]:
    meta = json.loads(Path(path).read_text())
    cfg = PreprocessConfig(**meta["preprocess"])
    stats = None if meta.get("norm_stats") is None else NormStats.from_dict(meta["norm_stats"])
    return cfg, stats


# -- windows ---------------------------------------------------------------


def make_windows(series: RawSeries, w: int) -> WindowedDataset:
    """Every (w previous columns, next column) pair: T - w windows."""
    if w < 1:
        raise ContractError(f"window must be >= 1, got {w}")
    if series.n_steps <= w:
        raise ContractError(f"series of length {series.n_steps} too short for window {w}")
    if np.isnan(series.values).any():
        raise DataError("make_windows needs imputed data")
    view = np.lib.stride_tricks.sliding_window_view(series.values, w, axis=1)
    inputs = np.ascontiguousarray(view[:, :-1, :].transpose(1, 0, 2))
    targets = np.ascontiguousarray(series.values[:, w:].T)
    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        timestamps=series.ticks[w:].copy(),
        window=w,
        labels=None if series.labels is None else series.labels[w:].copy(),
    )


def split_train_val(windows: WindowedDataset, val_fraction: float) -> tuple[WindowedDataset, WindowedDataset]:
    """Chronological split; the last ``ceil(count * val_fraction)`` windows validate."""
    if not 0 < val_fraction < 1:
        raise ContractError(f"val_fraction must be in (0, 1), got {val_fraction}")
    count = len(windows)
    n_val = math.ceil(count * val_fraction)
    cut = count - n_val
    return windows.subset(slice(0, cut)), windows.subset(slice(cut, count))
