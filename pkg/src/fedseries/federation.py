"""In-process federated training: SOLO, FedAvg and attentive aggregation (FedAtt).

Clients hand the server nothing but :class:`ClientUpdate` payloads
(client id, parameters, training-sample count) and scalar validation
losses; their windows never leave :class:`ClientState`.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import WindowedDataset
from .errors import DataError, FedSeriesError, TrainingDivergence
from .model import ModelConfig, forward, init_params, loss_and_grad
from .numerics import DTYPE, ParamStore, softmax_array
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)

STRATEGIES = ("SOLO", "FedAvg", "FedAtt")
SIGNS = ("attract", "repel")


def normalize_strategy(name: str) -> str:
    for s in STRATEGIES:
        if s.lower() == str(name).lower():
            return s
    raise ValueError(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGIES)}")


@dataclass(frozen=True)
class FedConfig:
    strategy: str = "FedAtt"
    rounds: int = 10
    local_epochs: int = 1
    solo_epochs: int = 10
    batch_size: int = 32
    epsilon: float = 1.0
    seed: int = 0
    lr: float = 1e-3
    attention_sign: str = "attract"
    reset_optimizer: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "strategy", normalize_strategy(self.strategy))
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0 < self.epsilon < 2:
            raise ValueError("epsilon must lie in (0, 2)")
        if self.batch_size < 1 or self.local_epochs < 0 or self.solo_epochs < 0:
            raise ValueError("batch_size must be positive and epoch counts non-negative")
        if self.attention_sign not in SIGNS:
            raise ValueError(f"attention_sign must be one of {SIGNS}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class ClientUpdate:
    """What a client sends to the server after a round."""

    client_id: str
    params: ParamStore
    n_train: int


@dataclass
class ClientState:
    client_id: str
    dataset: WindowedDataset
    params: ParamStore
    optimizer: AdamState
    model_config: ModelConfig
    rng: np.random.Generator = field(repr=False)
    steps: int = 0
    last_loss: float = float("nan")

    @property
    def n_train(self) -> int:
        return self.dataset.count("train")


def client_seed(seed: int, client_id: str) -> list[int]:
    digest = hashlib.sha256(client_id.encode("utf-8")).digest()
    return [seed, int.from_bytes(digest[:8], "little")]


def make_client(client_id: str, dataset: WindowedDataset, model_config: ModelConfig,
                init: ParamStore, seed: int, lr: float = 1e-3) -> ClientState:
    params = init.copy()
    return ClientState(
        client_id=client_id,
        dataset=dataset,
        params=params,
        optimizer=AdamState.for_params(params, lr=lr),
        model_config=model_config,
        rng=np.random.default_rng(client_seed(seed, client_id)),
    )


def local_train(client: ClientState, global_params: ParamStore | None, epochs: int,
                batch_size: int, reset_optimizer: bool = False) -> ClientState:
    """Minibatch Adam on the client's train split, in place.

    With ``global_params`` the client starts from the broadcast model;
    ``None`` keeps its own parameters (SOLO).
    """
    x, t, y = client.dataset.subset("train")
    if len(y) == 0:
        raise DataError(f"client {client.client_id}: empty training split")
    if global_params is not None:
        client.params.assign(global_params)
    if reset_optimizer:
        client.optimizer.reset(client.params)
    for epoch in range(epochs):
        order = client.rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            loss = loss_and_grad(client.params, client.model_config, x[idx], t[idx], y[idx])
            if not np.isfinite(loss) or not np.all(np.isfinite(client.params.flat_grad())):
                raise TrainingDivergence(
                    f"client {client.client_id}: non-finite loss/gradient at epoch {epoch}, "
                    f"batch starting {start} (loss={loss})"
                )
            adam_step(client.params, client.optimizer)
            client.steps += 1
            client.last_loss = loss
    return client


def validation_loss(client: ClientState, params: ParamStore | None = None) -> float | None:
    """Mean squared error on the client's validation split, or None if it has none."""
    x, t, y = client.dataset.subset("validation")
    if len(y) == 0:
        return None
    params = client.params if params is None else params
    pred = np.concatenate([
        forward(params, client.model_config, x[i:i + 256], t[i:i + 256]) for i in range(0, len(y), 256)
    ])
    return float(np.mean((pred - y) ** 2))


def train_round(client: ClientState, global_params: ParamStore, epochs: int,
                batch_size: int, reset_optimizer: bool = False) -> ClientUpdate:
    local_train(client, global_params, epochs, batch_size, reset_optimizer)
    return ClientUpdate(client.client_id, client.params.copy(), client.n_train)


# aggregation


def fedavg_aggregate(updates: Sequence) -> ParamStore:
    """Sample-count weighted mean of client parameters."""
    if not updates:
        raise ValueError("no clients to aggregate")
    template = updates[0].params
    for u in updates[1:]:
        template.check_compatible(u.params)
    total = float(sum(u.n_train for u in updates))
    if total <= 0:
        raise ValueError("clients report no training samples")
    acc = np.zeros(template.size, dtype=DTYPE)
    for u in updates:
        acc += (u.n_train / total) * u.params.flatten()
    return template.unflatten(acc)


def fedatt_scores(global_params: ParamStore, clients: Sequence[ParamStore]) -> dict[str, np.ndarray]:
    """Per layer tag, the Euclidean distance from the global model to each client."""
    g = global_params.flatten()
    slices = global_params.layer_slices()
    flats = []
    for c in clients:
        global_params.check_compatible(c)
        flats.append(c.flatten())
    scores = {}
    for tag, parts in slices.items():
        idx = np.concatenate([np.arange(s.start, s.stop) for s in parts])
        scores[tag] = np.array([np.linalg.norm(g[idx] - f[idx]) for f in flats])
    return scores


def fedatt_attention(scores: dict[str, np.ndarray], sign: str = "attract") -> dict[str, np.ndarray]:
    """Softmax over clients per layer.

    ``attract`` gives larger weight to clients further from the global
    model; ``repel`` uses negated distances.
    """
    if sign not in SIGNS:
        raise ValueError(f"sign must be one of {SIGNS}")
    factor = 1.0 if sign == "attract" else -1.0
    out = {}
    for tag, s in scores.items():
        s = np.asarray(s, dtype=DTYPE)
        if s.size == 0:
            raise ValueError("attention needs at least one client")
        out[tag] = softmax_array(factor * s)
    return out


def fedatt_update(global_params: ParamStore, clients: Sequence[ParamStore],
                  weights: dict[str, np.ndarray], epsilon: float) -> ParamStore:
    """``g <- g - eps * sum_k a_k (g - c_k)`` per layer, as ``(1-eps) g + eps * sum_k a_k c_k``."""
    g = global_params.flatten()
    flats = [c.flatten() for c in clients]
    new = g.copy()
    for tag, parts in global_params.layer_slices().items():
        alpha = weights[tag]
        if len(alpha) != len(flats):
            raise ValueError(f"layer {tag!r}: {len(alpha)} weights for {len(flats)} clients")
        for s in parts:
            pulled = np.zeros(s.stop - s.start, dtype=DTYPE)
            for a, f in zip(alpha, flats):
                pulled += a * f[s]
            new[s] = (1.0 - epsilon) * g[s] + epsilon * pulled
    return global_params.unflatten(new)


# orchestration


@dataclass
class FederationResult:
    global_params: ParamStore
    trace: list[dict]


def _run_clients(fn: Callable, clients: Sequence[ClientState], workers: int) -> list:
    def guarded(client):
        try:
            return fn(client)
        except TrainingDivergence:
            raise
        except FedSeriesError as exc:
            raise type(exc)(f"client {client.client_id}: {exc}") from exc
        except Exception as exc:
            raise RuntimeError(f"client {client.client_id}: {exc}") from exc

    if workers <= 1 or len(clients) <= 1:
        return [guarded(c) for c in clients]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(guarded, clients))


def _val_losses(clients, params, workers) -> dict:
    losses = _run_clients(lambda c: validation_loss(c, params), clients, workers)
    return {c.client_id: v for c, v in zip(clients, losses)}


def run_federation(clients: Sequence[ClientState], config: FedConfig,
                   global_params: ParamStore | None = None,
                   on_round: Callable[[dict], None] | None = None) -> FederationResult:
    """Broadcast, train locally, aggregate; ``config.rounds`` times."""
    if not clients:
        raise ValueError("federation needs at least one client")
    if config.strategy == "SOLO":
        raise ValueError("use run_solo for the SOLO strategy")
    if global_params is None:
        global_params = init_params(clients[0].model_config, config.seed)
    global_params = global_params.copy()
    trace = []
    for rnd in range(1, config.rounds + 1):
        broadcast = global_params.copy()
        updates: list[ClientUpdate] = _run_clients(
            lambda c: train_round(c, broadcast, config.local_epochs, config.batch_size, config.reset_optimizer),
            clients, config.workers,
        )
        record = {"round": rnd, "strategy": config.strategy, "clients": [u.client_id for u in updates]}
        if config.strategy == "FedAvg":
            global_params = fedavg_aggregate(updates)
            total = sum(u.n_train for u in updates)
            record["sample_weights"] = [u.n_train / total for u in updates]
        else:
            locals_ = [u.params for u in updates]
            scores = fedatt_scores(global_params, locals_)
            weights = fedatt_attention(scores, config.attention_sign)
            global_params = fedatt_update(global_params, locals_, weights, config.epsilon)
            record["attention_sign"] = config.attention_sign
            record["epsilon"] = config.epsilon
            record["attention"] = {tag: w.tolist() for tag, w in weights.items()}
        record["global_norm"] = float(np.linalg.norm(global_params.flatten()))
        record["train_loss"] = {c.client_id: c.last_loss for c in clients}
        record["val_loss"] = _val_losses(clients, global_params, config.workers)
        trace.append(record)
        logger.info("round %d/%d %s global_norm=%.6g", rnd, config.rounds, config.strategy, record["global_norm"])
        if on_round is not None:
            on_round(record)
    return FederationResult(global_params, trace)


def run_solo(clients: Sequence[ClientState], config: FedConfig,
             on_epoch: Callable[[dict], None] | None = None) -> tuple[dict[str, ParamStore], list[dict]]:
    """Each client trains alone for ``config.solo_epochs``; no communication."""
    trace = []
    for epoch in range(1, config.solo_epochs + 1):
        _run_clients(lambda c: local_train(c, None, 1, config.batch_size), clients, config.workers)
        record = {
            "epoch": epoch,
            "strategy": "SOLO",
            "clients": [c.client_id for c in clients],
            "train_loss": {c.client_id: c.last_loss for c in clients},
            "val_loss": {c.client_id: validation_loss(c) for c in clients},
        }
        trace.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return {c.client_id: c.params.copy() for c in clients}, trace
