"""Adam for ParamStore parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import ParamStore


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, **hyper) -> "AdamState":
        state = cls(**hyper)
        state.reset(params)
        return state

    def reset(self, params: ParamStore) -> None:
        """Zero both moments and the step counter."""
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.params.items()}

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.t,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_step(params: ParamStore, state: AdamState, grads: dict | None = None) -> None:
    """One bias-corrected Adam update, in place. Gradients default to ``params.grads``."""
    grads = params.grads if grads is None else grads
    if not state.m:
        state.reset(params)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch for {name!r}: param {p.shape}, grad {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
