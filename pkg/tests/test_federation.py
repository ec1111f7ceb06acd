import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fedseries.federation as fed
from fedseries.data import ingest
from fedseries.errors import TrainingDivergence
from fedseries.federation import (
    ClientUpdate,
    FedConfig,
    fedatt_attention,
    fedatt_scores,
    fedatt_update,
    fedavg_aggregate,
    local_train,
    make_client,
    run_federation,
    run_solo,
)
from fedseries.model import init_params, tiny_config
from fedseries.numerics import ParamStore

CFG = tiny_config(seq_len=8)


def _scalar_store(value, tag="w"):
    s = ParamStore()
    s.add(tag, [float(value)])
    return s


def _update(value, n, cid="c"):
    return ClientUpdate(cid, _scalar_store(value), n)


@pytest.fixture
def datasets(sine_csv):
    return {name: ingest(sine_csv(name, n=160 + 20 * i, seed=i), name, seq_len=CFG.seq_len)
            for i, name in enumerate(["AAA", "BBB", "CCC"])}


def _clients(datasets, names=None, seed=0):
    init = init_params(CFG, seed)
    names = names or sorted(datasets)
    return [make_client(n, datasets[n], CFG, init, seed) for n in names]


# aggregation rules


def test_fedavg_examples():
    p = init_params(CFG, 0)
    out = fedavg_aggregate([ClientUpdate("a", p, 3), ClientUpdate("b", p.copy(), 9)])
    np.testing.assert_allclose(out.flatten(), p.flatten(), rtol=1e-15)
    assert fedavg_aggregate([_update(0, 5), _update(2, 5)])["w"][0] == 1.0
    assert fedavg_aggregate([_update(0, 1), _update(4, 3)])["w"][0] == 3.0
    with pytest.raises(ValueError):
        fedavg_aggregate([])


def test_fedatt_score_examples():
    g = init_params(CFG, 0)
    assert all(np.all(s == 0) for s in fedatt_scores(g, [g.copy()]).values())
    zero = ParamStore()
    zero.add("layer", [0.0, 0.0])
    client = ParamStore()
    client.add("layer", [3.0, 4.0])
    assert fedatt_scores(zero, [client])["layer"][0] == 5.0
    with pytest.raises(ValueError):
        fedatt_scores(zero, [_scalar_store(1.0, "layer")])


def test_fedatt_attention_examples():
    w = fedatt_attention({"a": np.array([2.0, 2.0, 2.0, 2.0])})["a"]
    np.testing.assert_array_equal(w, [0.25] * 4)
    assert fedatt_attention({"a": np.array([7.0])})["a"][0] == 1.0
    np.testing.assert_allclose(fedatt_attention({"a": np.array([0.0, np.log(3)])})["a"], [0.25, 0.75], atol=1e-15)
    np.testing.assert_allclose(fedatt_attention({"a": np.array([0.0, np.log(3)])}, "repel")["a"], [0.75, 0.25], atol=1e-15)


def test_fedatt_update_examples(rng):
    g = init_params(CFG, 0)
    clients = [g.copy(), g.copy()]
    w = fedatt_attention(fedatt_scores(g, clients))
    assert np.max(np.abs(fedatt_update(g, clients, w, 1.0).flatten() - g.flatten())) < 1e-12

    c = g.unflatten(rng.normal(size=g.size))
    w1 = fedatt_attention(fedatt_scores(g, [c]))
    assert fedatt_update(g, [c], w1, 1.0).flatten().tobytes() == c.flatten().tobytes()

    w2 = fedatt_attention(fedatt_scores(g, [c, g.copy()]))
    np.testing.assert_array_equal(fedatt_update(g, [c, g.copy()], w2, 0.0).flatten(), g.flatten())


def _random_stores(seed, k, size=6):
    rng = np.random.default_rng(seed)
    template = ParamStore()
    template.add("a", np.zeros(size // 2))
    template.add("b", np.zeros(size - size // 2))
    return template.unflatten(rng.normal(size=size)), [template.unflatten(rng.normal(size=size)) for _ in range(k)]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.floats(0.01, 1.0))
def test_fedatt_properties(seed, k, eps):
    g, clients = _random_stores(seed, k)
    scores = fedatt_scores(g, clients)
    weights = fedatt_attention(scores)
    for w in weights.values():
        assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-9
    new = fedatt_update(g, clients, weights, eps).flatten()
    stacked = np.stack([g.flatten()] + [c.flatten() for c in clients])
    assert np.all(new >= stacked.min(axis=0) - 1e-12) and np.all(new <= stacked.max(axis=0) + 1e-12)

    perm = np.random.default_rng(seed).permutation(k)
    pc = [clients[i] for i in perm]
    for tag in scores:
        np.testing.assert_array_equal(fedatt_scores(g, pc)[tag], scores[tag][perm])
    moved = fedatt_update(g, pc, fedatt_attention(fedatt_scores(g, pc)), eps).flatten()
    assert np.max(np.abs(moved - new)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_fedavg_properties(seed, k):
    _, clients = _random_stores(seed, k)
    counts = np.random.default_rng(seed).integers(1, 100, size=k)
    updates = [ClientUpdate(str(i), c, int(n)) for i, (c, n) in enumerate(zip(clients, counts))]
    agg = fedavg_aggregate(updates).flatten()
    stacked = np.stack([c.flatten() for c in clients])
    assert np.all(agg >= stacked.min(axis=0) - 1e-12) and np.all(agg <= stacked.max(axis=0) + 1e-12)
    perm = np.random.default_rng(seed + 1).permutation(k)
    assert np.max(np.abs(fedavg_aggregate([updates[i] for i in perm]).flatten() - agg)) < 1e-12


# local training


def test_local_train_zero_epochs_copies_global(datasets):
    client = _clients(datasets, ["AAA"])[0]
    g = init_params(CFG, 42)
    local_train(client, g, epochs=0, batch_size=32)
    assert client.params.flatten().tobytes() == g.flatten().tobytes()


def test_local_train_step_count(datasets):
    ds = datasets["AAA"]
    keep = np.flatnonzero(ds.mask("train"))[:64]
    sub = dataclasses.replace(ds, inputs=ds.inputs[keep], time_index=ds.time_index[keep],
                              targets=ds.targets[keep], split=ds.split[keep])
    client = make_client("AAA", sub, CFG, init_params(CFG, 0), 0)
    local_train(client, None, epochs=1, batch_size=32)
    assert client.steps == 2 and client.optimizer.t == 2
    client2 = make_client("AAA", dataclasses.replace(sub, targets=sub.targets[:63], inputs=sub.inputs[:63],
                                                     time_index=sub.time_index[:63], split=sub.split[:63]),
                          CFG, init_params(CFG, 0), 0)
    local_train(client2, None, epochs=1, batch_size=32)
    assert client2.steps == 2


def test_local_train_deterministic(datasets):
    a = local_train(_clients(datasets, ["BBB"])[0], None, 1, 16)
    b = local_train(_clients(datasets, ["BBB"])[0], None, 1, 16)
    assert a.params.flatten().tobytes() == b.params.flatten().tobytes()


def test_divergence_is_reported(datasets):
    client = _clients(datasets, ["AAA"])[0]
    client.params["head.W"][...] = np.nan
    with pytest.raises(TrainingDivergence, match="AAA"):
        local_train(client, None, 1, 32)


# orchestration


def test_single_client_fedavg_equals_local_training(datasets):
    config = FedConfig(strategy="FedAvg", rounds=2, local_epochs=1, batch_size=16)
    result = run_federation(_clients(datasets, ["AAA"]), config, global_params=init_params(CFG, 0))
    plain = _clients(datasets, ["AAA"])[0]
    local_train(plain, None, epochs=2, batch_size=16)
    assert np.max(np.abs(result.global_params.flatten() - plain.params.flatten())) <= 1e-12


def test_solo_equals_single_client_federation(datasets):
    solo, trace = run_solo(_clients(datasets, ["CCC"]), FedConfig(strategy="SOLO", solo_epochs=2, batch_size=16))
    fedrun = run_federation(_clients(datasets, ["CCC"]), FedConfig(strategy="FedAvg", rounds=2, batch_size=16),
                            global_params=init_params(CFG, 0))
    assert np.max(np.abs(solo["CCC"].flatten() - fedrun.global_params.flatten())) <= 1e-12
    assert len(trace) == 2


def test_solo_isolation(datasets):
    config = FedConfig(strategy="SOLO", solo_epochs=1, batch_size=32)
    together, _ = run_solo(_clients(datasets), config)
    alone, _ = run_solo(_clients(datasets, ["BBB"]), config)
    assert together["BBB"].flatten().tobytes() == alone["BBB"].flatten().tobytes()
    again, _ = run_solo(_clients(datasets), config)
    assert all(again[k].flatten().tobytes() == together[k].flatten().tobytes() for k in together)


def test_identical_clients_follow_single_trajectory(datasets):
    ds = datasets["AAA"]
    init = init_params(CFG, 0)
    twins = [make_client("AAA", ds, CFG, init, 0) for _ in range(3)]
    result = run_federation(twins, FedConfig(strategy="FedAvg", rounds=2, batch_size=32), global_params=init)
    single = run_federation([make_client("AAA", ds, CFG, init, 0)], FedConfig(strategy="FedAvg", rounds=2, batch_size=32),
                            global_params=init)
    assert np.max(np.abs(result.global_params.flatten() - single.global_params.flatten())) < 1e-12


@pytest.mark.parametrize("strategy", ["FedAvg", "FedAtt"])
def test_round_count_and_trace(datasets, strategy):
    config = FedConfig(strategy=strategy, rounds=3, batch_size=64)
    result = run_federation(_clients(datasets), config)
    assert [r["round"] for r in result.trace] == [1, 2, 3]
    for r in result.trace:
        assert set(r["val_loss"]) == set(datasets)
        if strategy == "FedAtt":
            for w in r["attention"].values():
                assert abs(sum(w) - 1) < 1e-9 and min(w) >= 0
            assert r["attention_sign"] == "attract"
        else:
            assert abs(sum(r["sample_weights"]) - 1) < 1e-12


@pytest.mark.parametrize("strategy", ["FedAvg", "FedAtt"])
def test_worker_count_does_not_change_results(datasets, strategy):
    runs = [run_federation(_clients(datasets), FedConfig(strategy=strategy, rounds=2, batch_size=64, workers=w))
            for w in (1, 3)]
    assert runs[0].global_params.flatten().tobytes() == runs[1].global_params.flatten().tobytes()
    assert runs[0].trace == runs[1].trace


def test_client_order_does_not_change_aggregate(datasets):
    names = sorted(datasets)
    for strategy in ("FedAvg", "FedAtt"):
        a = run_federation(_clients(datasets, names), FedConfig(strategy=strategy, rounds=1, batch_size=64))
        b = run_federation(_clients(datasets, names[::-1]), FedConfig(strategy=strategy, rounds=1, batch_size=64))
        assert np.max(np.abs(a.global_params.flatten() - b.global_params.flatten())) < 1e-12


def test_server_only_sees_parameters_and_counts(datasets, monkeypatch):
    seen = []
    real_avg, real_scores = fed.fedavg_aggregate, fed.fedatt_scores

    def spy_avg(updates):
        seen.extend(updates)
        return real_avg(updates)

    def spy_scores(global_params, clients):
        seen.extend(clients)
        return real_scores(global_params, clients)

    monkeypatch.setattr(fed, "fedavg_aggregate", spy_avg)
    monkeypatch.setattr(fed, "fedatt_scores", spy_scores)
    for strategy in ("FedAvg", "FedAtt"):
        run_federation(_clients(datasets), FedConfig(strategy=strategy, rounds=1, batch_size=64))
    assert seen
    for item in seen:
        if isinstance(item, ClientUpdate):
            assert {f.name for f in dataclasses.fields(item)} == {"client_id", "params", "n_train"}
            assert isinstance(item.params, ParamStore) and isinstance(item.n_train, int)
            assert isinstance(item.client_id, str)
        else:
            assert isinstance(item, ParamStore)


def test_fed_config_validation():
    with pytest.raises(ValueError):
        FedConfig(epsilon=2.0)
    with pytest.raises(ValueError):
        FedConfig(rounds=0)
    with pytest.raises(ValueError):
        FedConfig(strategy="gossip")
    assert FedConfig(strategy="fedatt").strategy == "FedAtt"
    with pytest.raises(ValueError):
        run_federation([], FedConfig())
