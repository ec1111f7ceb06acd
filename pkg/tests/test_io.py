import numpy as np
import pytest

from fedseries.data import ingest
from fedseries.errors import DataError
from fedseries.io import config_hash, load_dataset, load_params, save_dataset, save_params
from fedseries.model import init_params, tiny_config


def test_params_round_trip(tmp_path):
    store = init_params(tiny_config(), 3)
    manifest_path = save_params(store, tmp_path / "m", strategy="FedAtt")
    back, manifest = load_params(tmp_path / "m")
    assert manifest_path.name == "m.json" and manifest["strategy"] == "FedAtt"
    assert back.names() == store.names()
    assert back.flatten().tobytes() == store.flatten().tobytes()
    assert [e.tag for e in back.entries()] == [e.tag for e in store.entries()]


def test_params_bytes_are_stable(tmp_path):
    store = init_params(tiny_config(), 3)
    save_params(store, tmp_path / "a")
    save_params(store.copy(), tmp_path / "b")
    for suffix in (".bin", ".json"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()


def test_params_errors(tmp_path):
    with pytest.raises(DataError):
        load_params(tmp_path / "none")
    save_params(init_params(tiny_config(), 0), tmp_path / "x")
    (tmp_path / "x.bin").write_bytes(b"\0" * 16)
    with pytest.raises(DataError):
        load_params(tmp_path / "x")


def test_dataset_round_trip(tmp_path, sine_csv):
    ds = ingest(sine_csv("RT", n=220), "RT", seq_len=8)
    save_dataset(ds, tmp_path / "d", "h")
    back = load_dataset(tmp_path / "d")
    for name in ("inputs", "time_index", "targets", "split"):
        a, b = getattr(ds, name), getattr(back, name)
        assert a.dtype == b.dtype and a.tobytes() == b.tobytes()
    np.testing.assert_array_equal(back.normalization.min, ds.normalization.min)
    assert back.split_rows == ds.split_rows and back.dates == ds.dates
    save_dataset(back, tmp_path / "e", "h")
    for f in (tmp_path / "d").iterdir():
        assert f.read_bytes() == (tmp_path / "e" / f.name).read_bytes()


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16
