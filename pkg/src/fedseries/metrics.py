"""Forecast error metrics and per-symbol evaluation reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import CLOSE, WindowedDataset, invert_column
from .errors import DataError
from .federation import STRATEGIES

MAPE_FLOOR = 1e-8
EVAL_SPLITS = ("validation", "test")
SERIES_COLUMNS = ("window_index", "split", "actual_norm", "forecast_norm", "actual_return", "forecast_return")

Predictor = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _pair(actual, forecast) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    f = np.asarray(forecast, dtype=np.float64).reshape(-1)
    if a.shape != f.shape:
        raise ValueError(f"length mismatch: {a.size} actual vs {f.size} forecast")
    if a.size == 0:
        raise ValueError("metric of empty input")
    return a, f


def mse(actual, forecast) -> float:
    a, f = _pair(actual, forecast)
    return float(np.mean((a - f) ** 2))


def mae(actual, forecast) -> float:
    a, f = _pair(actual, forecast)
    return float(np.mean(np.abs(a - f)))


def mape(actual, forecast) -> float:
    """Mean absolute percentage error in percent; entries with |actual| < 1e-8 are skipped."""
    a, f = _pair(actual, forecast)
    keep = np.abs(a) >= MAPE_FLOOR
    if not keep.any():
        raise ValueError("every actual value is ~0; MAPE undefined")
    return float(np.mean(np.abs((a[keep] - f[keep]) / a[keep])) * 100.0)


def score(actual, forecast) -> dict[str, float]:
    return {"mse": mse(actual, forecast), "mae": mae(actual, forecast), "mape": mape(actual, forecast)}


def persistence_forecast(inputs: np.ndarray, time_index: np.ndarray | None = None) -> np.ndarray:
    """Predict the last observed normalized close return of each window."""
    return np.asarray(inputs)[:, -1, CLOSE].copy()


@dataclass
class EvalReport:
    symbol: str
    strategy: str
    metrics: dict = field(default_factory=dict)
    metrics_returns: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    config_hash: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "EvalReport":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"{path}: no such report")
        return cls.from_json(path.read_text(encoding="utf-8"))

    def series_rows(self) -> list[tuple]:
        rows = []
        for split in EVAL_SPLITS:
            s = self.series.get(split)
            if not s:
                continue
            for row in zip(s["window_index"], s["actual_norm"], s["forecast_norm"],
                           s["actual_return"], s["forecast_return"]):
                rows.append((row[0], split) + row[1:])
        return rows

    def series_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SERIES_COLUMNS)
        for row in self.series_rows():
            writer.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])
        return buf.getvalue()


def build_report(predict: Predictor, dataset: WindowedDataset, strategy: str,
                 config_hash: str = "", seed: int = 0) -> EvalReport:
    """Score ``predict`` on the validation and test windows of ``dataset``.

    Metrics are computed on normalized close returns; ``metrics_returns``
    repeats them after mapping both series back to return units.
    """
    report = EvalReport(dataset.symbol, strategy, config_hash=config_hash, seed=seed)
    window_ids = np.arange(len(dataset))
    for split in EVAL_SPLITS:
        m = dataset.mask(split)
        if not m.any():
            raise DataError(f"{dataset.symbol}: {split} split has no windows")
        actual = dataset.targets[m]
        forecast = np.asarray(predict(dataset.inputs[m], dataset.time_index[m]), dtype=np.float64).reshape(-1)
        actual_ret = invert_column(actual, dataset.normalization)
        forecast_ret = invert_column(forecast, dataset.normalization)
        report.metrics[split] = score(actual, forecast)
        report.metrics_returns[split] = score(actual_ret, forecast_ret)
        report.series[split] = {
            "window_index": window_ids[m].tolist(),
            "actual_norm": actual.tolist(),
            "forecast_norm": forecast.tolist(),
            "actual_return": actual_ret.tolist(),
            "forecast_return": forecast_ret.tolist(),
        }
    return report


TABLE_COLUMNS = ("symbol", "strategy", "mse", "mae", "mape")


def comparison_table(reports: list[EvalReport], split: str = "test") -> str:
    """CSV in the layout symbol x strategy x (MSE, MAE, MAPE)."""
    order = {s: i for i, s in enumerate(STRATEGIES)}
    ordered = sorted(reports, key=lambda r: (r.symbol, order.get(r.strategy, len(order)), r.strategy))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for r in ordered:
        m = r.metrics[split]
        writer.writerow([r.symbol, r.strategy, f"{m['mse']:.6g}", f"{m['mae']:.6g}", f"{m['mape']:.6g}"])
    return buf.getvalue()
