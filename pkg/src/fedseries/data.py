"""OHLCV CSV ingestion and the windowed-dataset preprocessing pipeline.

raw CSV -> moving-average smoothing -> daily returns -> 80/10/10 split ->
min-max scaling fitted on train rows -> per-split sliding windows.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

FEATURES = ("Volume", "Open", "High", "Low", "Close")
CLOSE = FEATURES.index("Close")
REQUIRED_COLUMNS = ("Date", "Open", "High", "Low", "Close", "Volume")
SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class OhlcvRecord:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    volume: float

    def problems(self) -> list[str]:
        out = []
        if min(self.open, self.high, self.low, self.close) <= 0:
            out.append("non-positive price")
        if self.volume < 0:
            out.append("negative volume")
        if not (self.low <= self.open <= self.high and self.low <= self.close <= self.high):
            out.append("price outside [low, high]")
        return out


@dataclass
class RawSeries:
    symbol: str
    records: list[OhlcvRecord]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def dates(self) -> list[dt.date]:
        return [r.date for r in self.records]

    def matrix(self) -> np.ndarray:
        """(T, 5) array in the fixed feature order Volume, Open, High, Low, Close."""
        return np.array([[r.volume, r.open, r.high, r.low, r.close] for r in self.records], dtype=np.float64)


def parse_csv(path, symbol: str | None = None) -> RawSeries:
    """Read a daily OHLCV CSV. An ``Adj Close`` column is ignored."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    symbol = symbol or path.stem
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        col = {name: header.index(name) for name in REQUIRED_COLUMNS}

        records, bad = [], []
        for lineno, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                continue
            try:
                rec = OhlcvRecord(
                    date=dt.date.fromisoformat(row[col["Date"]].strip()),
                    open=float(row[col["Open"]]),
                    high=float(row[col["High"]]),
                    low=float(row[col["Low"]]),
                    close=float(row[col["Close"]]),
                    volume=float(row[col["Volume"]]),
                )
            except (ValueError, IndexError):
                bad.append(lineno)
                continue
            values = (rec.open, rec.high, rec.low, rec.close, rec.volume)
            if not all(np.isfinite(values)) or rec.problems():
                bad.append(lineno)
                continue
            records.append(rec)

    if bad:
        raise DataError(f"{path}: malformed rows {', '.join(map(str, bad))}")
    if len(records) < 2:
        raise DataError(f"{path}: need at least 2 valid rows, found {len(records)}")
    records.sort(key=lambda r: r.date)
    dupes = sorted({a.date.isoformat() for a, b in zip(records, records[1:]) if a.date == b.date})
    if dupes:
        raise DataError(f"{path}: duplicate dates {', '.join(dupes)}")
    return RawSeries(symbol, records)


def smooth_moving_average(values, window: int = 10) -> np.ndarray:
    """Trailing mean over ``window`` rows; output is ``window - 1`` rows shorter.

    Works on a single column or column-wise on a 2-D array.
    """
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    n = values.shape[0]
    if n < window:
        raise DataError(f"series of length {n} is shorter than the smoothing window {window}")
    # explicit loop keeps the summation order fixed (no cumsum drift)
    out = np.zeros((n - window + 1,) + values.shape[1:])
    for offset in range(window):
        out += values[offset:offset + n - window + 1]
    return out / window


def guard_zero_volume(volume) -> np.ndarray:
    """Replace zero volumes with the smallest positive volume in the series."""
    volume = np.asarray(volume, dtype=np.float64).copy()
    positive = volume[volume > 0]
    if positive.size == 0:
        raise DataError("volume is zero on every day")
    volume[volume == 0] = positive.min()
    return volume


def to_returns(values) -> np.ndarray:
    """Simple one-step change ``x[t+1] / x[t] - 1`` along the first axis."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 2:
        raise DataError("returns need at least 2 rows")
    if np.any(values[:-1] == 0):
        raise DataError("zero denominator in returns")
    return values[1:] / values[:-1] - 1.0


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    day_index: np.ndarray
    dates: tuple

    def __len__(self) -> int:
        return len(self.values)


def build_features(series: RawSeries, smoothing: int = 10) -> FeatureMatrix:
    """Smooth each raw column, then convert to daily changes.

    Row ``t`` is the change from smoothed day ``t`` to ``t+1``; its date is
    the last raw date entering the later smoothed value.
    """
    raw = series.matrix()
    raw[:, 0] = guard_zero_volume(raw[:, 0])
    smoothed = smooth_moving_average(raw, smoothing)
    values = to_returns(smoothed)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{series.symbol}: non-finite feature values")
    dates = tuple(d.isoformat() for d in series.dates[smoothing:])
    return FeatureMatrix(values, np.arange(len(values)), dates)


@dataclass(frozen=True)
class NormalizationParams:
    min: np.ndarray
    max: np.ndarray

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def minmax_fit(rows) -> NormalizationParams:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[:, None]
    if rows.shape[0] == 0:
        raise ValueError("cannot fit normalization on zero rows")
    return NormalizationParams(rows.min(axis=0), rows.max(axis=0))


def _check_width(rows: np.ndarray, params: NormalizationParams) -> None:
    if rows.shape[-1] != params.min.shape[0]:
        raise ValueError(f"expected {params.min.shape[0]} columns, got {rows.shape[-1]}")


def minmax_apply(rows, params: NormalizationParams) -> np.ndarray:
    """Scale to [0, 1] with train-fitted extrema; degenerate columns map to 0."""
    rows = np.asarray(rows, dtype=np.float64)
    _check_width(rows, params)
    span = params.max - params.min
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (rows - params.min) / safe, 0.0)


def minmax_invert(rows, params: NormalizationParams) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    _check_width(rows, params)
    return rows * (params.max - params.min) + params.min


def invert_column(values, params: NormalizationParams, column: int = CLOSE) -> np.ndarray:
    """Map normalized values of one feature column back to return units."""
    values = np.asarray(values, dtype=np.float64)
    return values * (params.max[column] - params.min[column]) + params.min[column]


def split_train_val_test(n_rows: int) -> dict[str, range]:
    """Chronological 80/10/10 row ranges; rounding remainder goes to test."""
    if n_rows < 10:
        raise DataError(f"need at least 10 feature rows to split, got {n_rows}")
    n_train = int(np.floor(0.8 * n_rows))
    n_val = int(np.floor(0.1 * n_rows))
    return {
        "train": range(0, n_train),
        "validation": range(n_train, n_train + n_val),
        "test": range(n_train + n_val, n_rows),
    }


def make_windows(matrix, seq_len: int = 16, horizon: int = 1, row_offset: int = 0):
    """Sliding windows over ``matrix`` with the next-row close value as target.

    Returns ``(inputs, time_index, targets)``; ``time_index`` holds the
    global row index of every step (``row_offset`` + local row).
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    if horizon != 1:
        raise ValueError("only one-step-ahead targets are supported")
    n = matrix.shape[0] - seq_len - horizon + 1
    if n < 1:
        raise DataError(f"range of {matrix.shape[0]} rows is too short for seq_len {seq_len} + horizon {horizon}")
    starts = np.arange(n)
    steps = starts[:, None] + np.arange(seq_len)
    inputs = matrix[steps]
    targets = matrix[starts + seq_len, CLOSE].copy()
    return inputs, steps + row_offset, targets


@dataclass
class WindowedDataset:
    symbol: str
    inputs: np.ndarray
    time_index: np.ndarray
    targets: np.ndarray
    split: np.ndarray
    normalization: NormalizationParams
    split_rows: dict[str, int] = field(default_factory=dict)
    dates: tuple = ()
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.targets)

    def mask(self, split: str) -> np.ndarray:
        return self.split == SPLITS.index(split)

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self.mask(split)
        return self.inputs[m], self.time_index[m], self.targets[m]

    def count(self, split: str) -> int:
        return int(self.mask(split).sum())

    def target_rows(self) -> np.ndarray:
        return self.time_index[:, -1] + 1


def window_dataset(features: FeatureMatrix, symbol: str, seq_len: int = 16) -> WindowedDataset:
    """Split feature rows, normalize with train-only extrema, window each split.

    A split shorter than ``seq_len + 1`` rows contributes no windows.
    """
    ranges = split_train_val_test(len(features))
    train_rows = features.values[ranges["train"].start:ranges["train"].stop]
    params = minmax_fit(train_rows)
    scaled = minmax_apply(features.values, params)

    inputs, times, targets, tags = [], [], [], []
    for code, name in enumerate(SPLITS):
        r = ranges[name]
        if len(r) < seq_len + 1:
            logger.warning("%s: %s split has %d rows, too few for a window of %d", symbol, name, len(r), seq_len)
            continue
        x, t, y = make_windows(scaled[r.start:r.stop], seq_len, 1, row_offset=r.start)
        inputs.append(x)
        times.append(t)
        targets.append(y)
        tags.append(np.full(len(y), code, dtype=np.uint8))
    if not inputs:
        raise DataError(f"{symbol}: series too short to form any window")
    return WindowedDataset(
        symbol=symbol,
        inputs=np.concatenate(inputs),
        time_index=np.concatenate(times).astype(np.int64),
        targets=np.concatenate(targets),
        split=np.concatenate(tags),
        normalization=params,
        split_rows={name: len(r) for name, r in ranges.items()},
        dates=features.dates,
        config={"seq_len": seq_len},
    )


def ingest(path, symbol: str | None = None, smoothing: int = 10, seq_len: int = 16) -> WindowedDataset:
    """Full pipeline from a CSV file to a windowed dataset."""
    series = parse_csv(path, symbol)
    features = build_features(series, smoothing)
    ds = window_dataset(features, series.symbol, seq_len)
    ds.config = {"smoothing": smoothing, "seq_len": seq_len}
    return ds
