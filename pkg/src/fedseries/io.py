"""Byte-stable artifacts: flat little-endian binaries plus JSON manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .data import SPLITS, NormalizationParams, WindowedDataset
from .errors import DataError
from .numerics import ParamStore

PARAMS_FORMAT = "fedseries-params/1"
DATASET_FORMAT = "fedseries-dataset/1"

_DATASET_ARRAYS = {
    "inputs": "<f8",
    "time_index": "<i8",
    "targets": "<f8",
    "split": "u1",
}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    return json.loads(path.read_text(encoding="utf-8"))


def params_manifest(store: ParamStore, **extra) -> dict:
    manifest = {
        "format": PARAMS_FORMAT,
        "dtype": "<f8",
        "n_values": store.size,
        "entries": [
            {"name": e.name, "tag": e.tag, "shape": list(e.shape), "offset": e.offset, "size": e.size}
            for e in store.entries()
        ],
    }
    manifest.update(extra)
    return manifest


def params_to_bytes(store: ParamStore) -> bytes:
    return store.flatten().astype("<f8").tobytes()


def params_from_bytes(blob: bytes, manifest: dict) -> ParamStore:
    vector = np.frombuffer(blob, dtype="<f8")
    if vector.size != manifest["n_values"]:
        raise DataError(f"parameter blob has {vector.size} values, manifest says {manifest['n_values']}")
    store = ParamStore()
    for e in manifest["entries"]:
        store.add(e["name"], vector[e["offset"]:e["offset"] + e["size"]].reshape(e["shape"]), e["tag"])
    return store


def save_params(store: ParamStore, path, **extra) -> Path:
    """Write ``<path>.bin`` and ``<path>.json``; returns the manifest path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.with_suffix(".bin").write_bytes(params_to_bytes(store))
    return write_json(path.with_suffix(".json"), params_manifest(store, **extra))


def load_params(path) -> tuple[ParamStore, dict]:
    path = Path(path)
    manifest = read_json(path.with_suffix(".json"))
    if manifest.get("format") != PARAMS_FORMAT:
        raise DataError(f"{path}: not a parameter manifest")
    blob_path = path.with_suffix(".bin")
    if not blob_path.is_file():
        raise DataError(f"{blob_path}: no such file")
    return params_from_bytes(blob_path.read_bytes(), manifest), manifest


def save_dataset(ds: WindowedDataset, directory, config_digest: str = "") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {"inputs": ds.inputs, "time_index": ds.time_index, "targets": ds.targets, "split": ds.split}
    shapes = {}
    for name, dtype in _DATASET_ARRAYS.items():
        arr = np.ascontiguousarray(arrays[name], dtype=dtype)
        (directory / f"{name}.bin").write_bytes(arr.tobytes())
        shapes[name] = list(arr.shape)
    manifest = {
        "format": DATASET_FORMAT,
        "symbol": ds.symbol,
        "arrays": {name: {"dtype": dtype, "shape": shapes[name]} for name, dtype in _DATASET_ARRAYS.items()},
        "split_rows": ds.split_rows,
        "split_windows": {name: ds.count(name) for name in SPLITS},
        "normalization": ds.normalization.to_dict(),
        "feature_dates": list(ds.dates),
        "pipeline": ds.config,
        "config_hash": config_digest,
    }
    return write_json(directory / "manifest.json", manifest)


def load_dataset(directory) -> WindowedDataset:
    directory = Path(directory)
    manifest = read_json(directory / "manifest.json")
    if manifest.get("format") != DATASET_FORMAT:
        raise DataError(f"{directory}: not a dataset directory")
    arrays = {}
    for name, meta in manifest["arrays"].items():
        blob = (directory / f"{name}.bin").read_bytes()
        arrays[name] = np.frombuffer(blob, dtype=meta["dtype"]).reshape(meta["shape"]).copy()
    return WindowedDataset(
        symbol=manifest["symbol"],
        inputs=arrays["inputs"],
        time_index=arrays["time_index"],
        targets=arrays["targets"],
        split=arrays["split"],
        normalization=NormalizationParams.from_dict(manifest["normalization"]),
        split_rows=manifest["split_rows"],
        dates=tuple(manifest.get("feature_dates", ())),
        config=manifest.get("pipeline", {}),
    )
