"""Time2Vec-embedded transformer encoder for next-step return regression."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import (
    ParamStore,
    Tensor,
    backward,
    concat,
    dense,
    layer_norm,
    matmul,
    relu,
    sin,
    softmax,
    square,
)

N_FEATURES = 5
# "window": day offset inside the window; "global": day index in the whole series
TIME_MODES = ("window", "global")


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 16
    n_features: int = N_FEATURES
    t2v_k: int = 1
    d_model: int = 256
    n_heads: int = 12
    d_head: int = 64
    n_encoders: int = 3
    d_ff: int | None = None
    ln_eps: float = 1e-5
    time_mode: str = "window"

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        for name in ("seq_len", "n_features", "t2v_k", "d_model", "n_heads", "d_head", "n_encoders", "d_ff"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.time_mode not in TIME_MODES:
            raise ValueError(f"time_mode must be one of {TIME_MODES}")

    @property
    def input_width(self) -> int:
        return self.n_features + self.t2v_k + 1

    @property
    def concat_width(self) -> int:
        return self.n_heads * self.d_head

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def tiny_config(**overrides) -> ModelConfig:
    """The small configuration used for gradient checks and golden values."""
    base = dict(seq_len=4, d_model=8, n_heads=2, d_head=4, n_encoders=1)
    base.update(overrides)
    return ModelConfig(**base)


def param_count(config: ModelConfig) -> int:
    """Closed-form number of scalar parameters for ``config``."""
    d, c, f = config.d_model, config.concat_width, config.d_ff
    t2v = 2 * (config.t2v_k + 1)
    embed = config.input_width * d + d
    attn = 3 * d * c + c * d + d
    ff = d * f + f + f * d + d
    norms = 4 * d
    head = d + 1
    return t2v + embed + config.n_encoders * (attn + ff + norms) + head


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, seed: int) -> ParamStore:
    """Glorot-uniform weights, zero biases and phases, Time2Vec frequencies in (0, 1)."""
    rng = np.random.default_rng(seed)
    d, c, f = config.d_model, config.concat_width, config.d_ff
    store = ParamStore()
    store.add("t2v.omega", rng.uniform(0.0, 1.0, size=config.t2v_k + 1))
    store.add("t2v.phi", np.zeros(config.t2v_k + 1))
    store.add("embed.W", _glorot(rng, config.input_width, d))
    store.add("embed.b", np.zeros(d))
    for i in range(config.n_encoders):
        p = f"enc{i}."
        store.add(p + "Wq", _glorot(rng, d, c))
        store.add(p + "Wk", _glorot(rng, d, c))
        store.add(p + "Wv", _glorot(rng, d, c))
        store.add(p + "Wo", _glorot(rng, c, d))
        store.add(p + "bo", np.zeros(d))
        store.add(p + "ln1.gain", np.ones(d))
        store.add(p + "ln1.bias", np.zeros(d))
        store.add(p + "ff1.W", _glorot(rng, d, f))
        store.add(p + "ff1.b", np.zeros(f))
        store.add(p + "ff2.W", _glorot(rng, f, d))
        store.add(p + "ff2.b", np.zeros(d))
        store.add(p + "ln2.gain", np.ones(d))
        store.add(p + "ln2.bias", np.zeros(d))
    store.add("head.W", _glorot(rng, d, 1))
    store.add("head.b", np.zeros(1))
    return store


def time2vec(tau, omega, phi) -> Tensor:
    """Linear channel ``omega[0]*tau + phi[0]`` followed by ``sin(omega[i]*tau + phi[i])``.

    ``tau`` has any leading shape; the output appends a channel axis of
    length ``len(omega)``.
    """
    tau = np.asarray(tau, dtype=np.float64)[..., None]
    omega = omega if isinstance(omega, Tensor) else Tensor(omega)
    phi = phi if isinstance(phi, Tensor) else Tensor(phi)
    if omega.shape[0] < 2:
        raise ValueError("time2vec needs at least one periodic channel")
    z = omega * tau + phi
    k1 = omega.shape[0]
    linear_mask = np.zeros(k1)
    linear_mask[0] = 1.0
    return z * linear_mask + sin(z) * (1.0 - linear_mask)


def attention(q, k, v, return_weights: bool = False):
    """Scaled dot-product attention over the last two axes."""
    q, k, v = (x if isinstance(x, Tensor) else Tensor(x) for x in (q, k, v))
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1] or q.shape[:-2] != k.shape[:-2]:
        raise ValueError(f"attention shape mismatch: {q.shape}, {k.shape}, {v.shape}")
    scores = matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2))
    weights = softmax(scores * (1.0 / math.sqrt(q.shape[-1])), axis=-1)
    out = matmul(weights, v)
    return (out, weights.data) if return_weights else out


def mhsa(x: Tensor, wq, wk, wv, wo, bo, n_heads: int, return_weights: bool = False):
    """Multi-head self-attention on ``x`` of shape (B, L, d_model).

    Column block ``h`` of each projection matrix is head ``h``'s own
    projection; head outputs are concatenated and mapped back by ``wo``.
    """
    b, length, _ = x.shape
    width = wq.shape[-1]
    d_head = width // n_heads

    def split(t):
        return t.reshape(b, length, n_heads, d_head).transpose(0, 2, 1, 3)

    q, k, v = (split(dense(x, w)) for w in (wq, wk, wv))
    heads, weights = attention(q, k, v, return_weights=True)
    merged = heads.transpose(0, 2, 1, 3).reshape(b, length, width)
    out = dense(merged, wo, bo)
    return (out, weights) if return_weights else out


def encoder_block(x: Tensor, leaves: dict, prefix: str, config: ModelConfig, return_weights: bool = False):
    """Post-norm block: ``LN(x + MHSA(x))`` then ``LN(y + FF(y))``."""
    attn, weights = mhsa(
        x, leaves[prefix + "Wq"], leaves[prefix + "Wk"], leaves[prefix + "Wv"],
        leaves[prefix + "Wo"], leaves[prefix + "bo"], config.n_heads, return_weights=True,
    )
    y = layer_norm(x + attn, leaves[prefix + "ln1.gain"], leaves[prefix + "ln1.bias"], config.ln_eps)
    hidden = relu(dense(y, leaves[prefix + "ff1.W"], leaves[prefix + "ff1.b"]))
    ff = dense(hidden, leaves[prefix + "ff2.W"], leaves[prefix + "ff2.b"])
    out = layer_norm(y + ff, leaves[prefix + "ln2.gain"], leaves[prefix + "ln2.bias"], config.ln_eps)
    return (out, weights) if return_weights else out


def forward_graph(params: ParamStore, config: ModelConfig, windows, time_index, return_attention: bool = False):
    """Build the graph for a batch and return the (B,) prediction tensor."""
    windows = np.asarray(windows, dtype=np.float64)
    time_index = np.asarray(time_index)
    if windows.ndim == 2:
        windows, time_index = windows[None], time_index[None]
    if windows.shape[1:] != (config.seq_len, config.n_features):
        raise ValueError(
            f"expected windows of shape (*, {config.seq_len}, {config.n_features}), got {windows.shape}"
        )
    if time_index.shape != windows.shape[:2]:
        raise ValueError("time_index must match the window batch and length")

    tau = time_index - time_index.min(axis=1, keepdims=True) if config.time_mode == "window" else time_index
    leaves = params.variables()
    t2v = time2vec(tau, leaves["t2v.omega"], leaves["t2v.phi"])
    x = dense(concat([Tensor(windows), t2v], axis=-1), leaves["embed.W"], leaves["embed.b"])
    maps = []
    for i in range(config.n_encoders):
        x, w = encoder_block(x, leaves, f"enc{i}.", config, return_weights=True)
        maps.append(w)
    pooled = x.mean(axis=1)
    pred = dense(pooled, leaves["head.W"], leaves["head.b"]).reshape(-1)
    return (pred, maps) if return_attention else pred


def forward(params: ParamStore, config: ModelConfig, windows, time_index) -> np.ndarray:
    """Predictions as a plain array; a single (L, 5) window gives shape (1,)."""
    return forward_graph(params, config, windows, time_index).data.copy()


def predict(params: ParamStore, config: ModelConfig, windows, time_index, batch_size: int = 256) -> np.ndarray:
    windows = np.asarray(windows)
    out = [
        forward(params, config, windows[i:i + batch_size], np.asarray(time_index)[i:i + batch_size])
        for i in range(0, len(windows), batch_size)
    ]
    return np.concatenate(out) if out else np.zeros(0)


def mse_loss(predictions, targets) -> Tensor:
    predictions = predictions if isinstance(predictions, Tensor) else Tensor(predictions)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {targets.shape}")
    if targets.size == 0:
        raise ValueError("mse_loss of empty input")
    return square(predictions - targets).mean()


def loss_and_grad(params: ParamStore, config: ModelConfig, windows, time_index, targets) -> float:
    """Forward + backward on one batch; gradients land in ``params.grads``."""
    loss = mse_loss(forward_graph(params, config, windows, time_index), targets)
    backward(loss)
    return loss.item()


@dataclass
class ForecastModel:
    """A config paired with its parameters."""

    config: ModelConfig
    params: ParamStore = field(repr=False)

    @classmethod
    def create(cls, config: ModelConfig, seed: int) -> "ForecastModel":
        return cls(config, init_params(config, seed))

    def predict(self, windows, time_index, batch_size: int = 256) -> np.ndarray:
        return predict(self.params, self.config, windows, time_index, batch_size)
