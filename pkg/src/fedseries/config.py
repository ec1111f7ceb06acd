"""Experiment configuration: one JSON file, canonical hashing, CLI/env overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FedSeriesError
from .federation import FedConfig
from .io import config_hash, read_json
from .model import ModelConfig

SEED_ENV = "FEDSERIES_SEED"

_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {"seq_len"}
_FED_KEYS = {f.name for f in dataclasses.fields(FedConfig)} - {"seed", "workers"}


@dataclass
class ExperimentConfig:
    data_dir: Path = Path("data")
    output_dir: Path = Path("runs")
    symbols: list[str] | None = None
    seed: int = 0
    smoothing: int = 10
    seq_len: int = 16
    model: dict = field(default_factory=dict)
    federation: dict = field(default_factory=dict)
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        d = dict(d)
        pipeline = d.pop("pipeline", {})
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise FedSeriesError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls(**d)
        cfg.smoothing = pipeline.get("smoothing", cfg.smoothing)
        cfg.seq_len = pipeline.get("seq_len", cfg.seq_len)
        for name in ("data_dir", "output_dir"):
            p = Path(getattr(cfg, name))
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            setattr(cfg, name, p)
        bad_model = set(cfg.model) - _MODEL_KEYS
        bad_fed = set(cfg.federation) - _FED_KEYS
        if bad_model or bad_fed:
            raise FedSeriesError(f"unknown model/federation keys: {', '.join(sorted(bad_model | bad_fed))}")
        cfg.model_config()
        cfg.fed_config()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(read_json(path), base_dir=path.parent)

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig(seq_len=self.seq_len, **self.model)
        except (TypeError, ValueError) as exc:
            raise FedSeriesError(f"invalid model config: {exc}") from None

    def fed_config(self, strategy: str | None = None) -> FedConfig:
        values = dict(self.federation)
        if strategy is not None:
            values["strategy"] = strategy
        try:
            return FedConfig(seed=self.seed, workers=self.workers, **values)
        except (TypeError, ValueError) as exc:
            raise FedSeriesError(f"invalid federation config: {exc}") from None

    def apply_env(self, environ=os.environ) -> None:
        raw = environ.get(SEED_ENV)
        if raw not in (None, ""):
            try:
                self.seed = int(raw)
            except ValueError:
                raise FedSeriesError(f"{SEED_ENV} must be an integer, got {raw!r}") from None

    def pipeline_dict(self) -> dict:
        return {"smoothing": self.smoothing, "seq_len": self.seq_len}

    def canonical(self) -> dict:
        """Everything that determines results; paths, worker count and strategy excluded."""
        fed = {k: v for k, v in dataclasses.asdict(self.fed_config()).items()
               if k not in ("workers", "strategy")}
        return {
            "symbols": self.symbols,
            "seed": self.seed,
            "pipeline": self.pipeline_dict(),
            "model": self.model_config().to_dict(),
            "federation": fed,
        }

    def digest(self) -> str:
        return config_hash(self.canonical())

    def pipeline_digest(self) -> str:
        return config_hash(self.pipeline_dict())

    def resolve_symbols(self) -> list[str]:
        if self.symbols is not None:
            return list(self.symbols)
        if not self.data_dir.is_dir():
            raise FedSeriesError(f"{self.data_dir}: data directory not found")
        found = sorted(p.stem for p in self.data_dir.glob("*.csv"))
        if not found:
            raise FedSeriesError(f"{self.data_dir}: no CSV files")
        return found

    # output layout

    def dataset_dir(self, symbol: str) -> Path:
        return self.output_dir / "datasets" / symbol

    def checkpoint_dir(self, strategy: str) -> Path:
        return self.output_dir / "checkpoints" / strategy.lower()

    def report_dir(self) -> Path:
        return self.output_dir / "reports"
