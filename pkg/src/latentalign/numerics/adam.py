"""Bias-corrected first/second-moment adaptive gradient steps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from latentalign.errors import ConfigError, NumericError
from latentalign.numerics.nn import ParamStore


@dataclass
class AdamState:
    """Optimizer accumulators, shape-matched to one :class:`ParamStore`."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, value in params.items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        return state


def adam_step(state: AdamState, params: ParamStore, grads: ParamStore) -> None:
    """One in-place update of `params` and `state` from `grads`.

    update = lr * m_hat / (sqrt(v_hat) + eps), with the usual 1 - beta^t
    bias corrections. Non-finite gradients raise rather than being clamped.
    """
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError("adam_step", f"gradient of {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] = params[name] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
