"""CSV ingestion, chronological splits, train-statistics scaling and sliding windows."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


class DataError(ValueError):
    """Malformed or unusable input data."""


class WindowConfigError(ValueError):
    """Window/split geometry does not fit the series."""


@dataclass
class RawSeries:
    values: np.ndarray  # [T, N]
    columns: list[str]
    timestamps: list[str] | None = None

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]


def _parse_float(cell: str) -> float | None:
    cell = cell.strip()
    if cell == "":
        return None
    return float(cell)  # Python's float() is locale independent


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv(path, fill_forward: bool = False) -> RawSeries:
    """Read a comma-separated file with an optional header row.

    A non-numeric first column is kept as timestamps. Blank cells are an
    error unless ``fill_forward`` is set, in which case the previous row's
    value is carried (a blank in the first data row is still an error).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")

    first_line, first = rows[0]
    header_present = not all(_is_number(c) for c in first[1:] or first)
    if header_present:
        header, rows = first, rows[1:]
    else:
        header = None
    if not rows:
        raise DataError(f"{path}: no data rows")

    width = len(rows[0][1])
    has_time = not _is_number(rows[0][1][0]) and rows[0][1][0].strip() != ""
    start = 1 if has_time else 0
    if header is not None and len(header) != width:
        raise DataError(f"{path}: line {first_line}: header has {len(header)} fields, data has {width}")
    if width - start < 1:
        raise DataError(f"{path}: no numeric columns")

    values = np.empty((len(rows), width - start))
    stamps = [] if has_time else None
    for r, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: line {lineno}: expected {width} fields, got {len(row)}")
        if has_time:
            stamps.append(row[0])
        for c, cell in enumerate(row[start:]):
            try:
                v = _parse_float(cell)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-numeric value {cell!r}") from None
            if v is None:
                if not fill_forward or r == 0:
                    raise DataError(f"{path}: line {lineno}: missing value in column {c + start + 1}")
                v = values[r - 1, c]
            if not math.isfinite(v):
                raise DataError(f"{path}: line {lineno}: non-finite value {cell!r}")
            values[r, c] = v
    columns = header[start:] if header is not None else [f"v{i}" for i in range(values.shape[1])]
    return RawSeries(values, [c.strip() for c in columns], stamps)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


def fit_stats(train_values: np.ndarray) -> NormStats:
    mean = train_values.mean(axis=0)
    std = train_values.std(axis=0)
    flat = std < STD_FLOOR
    if np.any(flat):
        logger.warning("constant training column(s) %s; std floored at %g", np.flatnonzero(flat).tolist(), STD_FLOOR)
        std = np.where(flat, STD_FLOOR, std)
    return NormStats(mean, std)


@dataclass
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    stats: NormStats
    bounds: tuple[int, int, int, int]  # start of train, val, test, and end


def split_bounds(T: int, ratios=(0.7, 0.1, 0.2)) -> tuple[int, int, int, int]:
    r = np.asarray(ratios, dtype=float)
    if r.shape != (3,) or np.any(r <= 0) or abs(r.sum() - 1.0) > 1e-9:
        raise WindowConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    n_train = int(T * r[0])
    n_val = int(T * r[1])
    return 0, n_train, n_train + n_val, T


def split_normalize(raw, ratios=(0.7, 0.1, 0.2), stats: NormStats | None = None, min_len: int = 0) -> Splits:
    """Chronological train/val/test split, z-scored with train-only statistics."""
    values = raw.values if isinstance(raw, RawSeries) else np.asarray(raw, dtype=float)
    b = split_bounds(len(values), ratios)
    parts = [values[b[i] : b[i + 1]] for i in range(3)]
    for name, part in zip(("train", "val", "test"), parts):
        if len(part) < max(min_len, 1):
            raise WindowConfigError(f"{name} split has {len(part)} rows, needs at least {min_len} for one window")
    stats = stats or fit_stats(parts[0])
    return Splits(*(stats.normalize(p) for p in parts), stats, b)


@dataclass
class WindowSet:
    """Sliding (input, target) windows over a [T, N] series; offsets index the input start."""

    series: np.ndarray
    seq_len: int
    pred_len: int
    stride: int
    offsets: np.ndarray

    def __len__(self) -> int:
        return len(self.offsets)

    def inputs(self, idx=None) -> np.ndarray:
        offs = self.offsets if idx is None else self.offsets[idx]
        steps = offs[:, None] + np.arange(self.seq_len)
        return self.series[steps]

    def targets(self, idx=None) -> np.ndarray:
        offs = self.offsets if idx is None else self.offsets[idx]
        steps = offs[:, None] + self.seq_len + np.arange(self.pred_len)
        return self.series[steps]


def make_windows(series: np.ndarray, seq_len: int, pred_len: int, stride: int = 1) -> WindowSet:
    series = np.asarray(series)
    if series.ndim == 1:
        series = series[:, None]
    T = len(series)
    if stride < 1:
        raise WindowConfigError(f"stride must be >= 1, got {stride}")
    if seq_len + pred_len > T:
        raise WindowConfigError(f"window of {seq_len}+{pred_len} steps does not fit a series of length {T}")
    count = (T - seq_len - pred_len) // stride + 1
    return WindowSet(series, seq_len, pred_len, stride, np.arange(count) * stride)


def batch_iter(windows: WindowSet, batch_size: int, shuffle: bool = False, seed=0):
    """Yield ([b, S, N], [b, P, N]) batches; the last batch may be short."""
    if batch_size < 1:
        raise WindowConfigError(f"batch size must be >= 1, got {batch_size}")
    order = np.arange(len(windows))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(windows))
    for i in range(0, len(order), batch_size):
        idx = order[i : i + batch_size]
        yield windows.inputs(idx), windows.targets(idx)
