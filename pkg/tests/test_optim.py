import numpy as np
import pytest

from fedseries.numerics import ParamStore, backward, square
from fedseries.optim import AdamState, adam_step


def _store(values):
    store = ParamStore()
    store.add("p", values)
    return store


def test_zero_gradient_fixed_point():
    store = _store([1.0, -2.0, 3.0])
    state = AdamState.for_params(store)
    adam_step(store, state)
    np.testing.assert_array_equal(store["p"], [1.0, -2.0, 3.0])
    assert state.t == 1


def test_first_step_value():
    store = _store([1.0])
    store.grads["p"][...] = 4.0
    adam_step(store, AdamState.for_params(store, lr=0.001))
    assert store["p"][0] == pytest.approx(1 - 0.001 * 4 / (4 + 1e-8), abs=1e-15)


def test_first_step_bounds_and_sign(rng):
    store = _store(rng.normal(size=50))
    g = rng.normal(size=50) * 10.0 ** rng.integers(-6, 3, size=50)
    g[::7] = 0.0
    store.grads["p"][...] = g
    before = store["p"].copy()
    state = AdamState.for_params(store)
    adam_step(store, state)
    delta = store["p"] - before
    assert np.all(np.abs(delta) <= state.lr * (1 + state.eps))
    nz = g != 0
    assert np.all(np.sign(delta[nz]) == -np.sign(g[nz]))
    assert np.all(delta[~nz] == 0)


def _run(seed, steps=20):
    rng = np.random.default_rng(seed)
    store = _store(rng.normal(size=5))
    state = AdamState.for_params(store)
    for _ in range(steps):
        store.grads["p"][...] = rng.normal(size=5)
        adam_step(store, state)
    return store["p"].copy()


def test_determinism():
    assert _run(3).tobytes() == _run(3).tobytes()


def test_convex_quadratic_converges():
    store = _store([3.0])
    state = AdamState.for_params(store, lr=0.1)

    def loss():
        return square(store.variables()["p"] - 0.5).sum()

    initial = loss().item()
    for _ in range(200):
        backward(loss())
        adam_step(store, state)
    assert loss().item() < 0.01 * initial


def test_shape_mismatch():
    store = _store([1.0, 2.0])
    state = AdamState.for_params(store)
    state.m["p"] = np.zeros(3)
    with pytest.raises(ValueError):
        adam_step(store, state)


def test_reset():
    store = _store([1.0])
    store.grads["p"][...] = 1.0
    state = AdamState.for_params(store)
    adam_step(store, state)
    state.reset(store)
    assert state.t == 0 and state.m["p"][0] == 0 and state.v["p"][0] == 0
