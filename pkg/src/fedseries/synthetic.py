"""Deterministic noisy-sine OHLCV series for tests, demos and smoke runs."""

from __future__ import annotations

import csv
import datetime as dt
from pathlib import Path

import numpy as np


def noisy_sine_ohlcv(
    n: int = 2000,
    seed: int = 0,
    period: float = 40.0,
    amplitude: float = 10.0,
    level: float = 100.0,
    noise: float = 1.0,
    start: dt.date = dt.date(2000, 1, 3),
) -> list[dict]:
    """Rows with a sinusoidal close plus Gaussian noise, consistent OHLC and volume."""
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    phase = rng.uniform(0, 2 * np.pi)
    close = level + amplitude * np.sin(2 * np.pi * t / period + phase) + noise * rng.standard_normal(n)
    open_ = np.concatenate([[close[0]], close[:-1]]) + 0.5 * noise * rng.standard_normal(n)
    spread = np.abs(rng.standard_normal((2, n))) * noise
    high = np.maximum(open_, close) + spread[0]
    low = np.minimum(open_, close) - spread[1]
    volume = np.round(1e6 * (1.5 + np.sin(2 * np.pi * t / (period / 2) + phase)) + rng.integers(0, 50_000, n))
    rows = []
    for i in range(n):
        rows.append({
            "Date": (start + dt.timedelta(days=i)).isoformat(),
            "Open": round(float(open_[i]), 6),
            "High": round(float(high[i]), 6),
            "Low": round(float(low[i]), 6),
            "Close": round(float(close[i]), 6),
            "Volume": int(volume[i]),
        })
    return rows


def write_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["Date", "Open", "High", "Low", "Close", "Volume"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path
