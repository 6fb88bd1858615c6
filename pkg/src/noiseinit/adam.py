"""Adam with bias correction, as a pure state-transition function."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError, ShapeError
from .nets import ParamVector


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ParameterError(f"Adam lr must be >= 0, got {lr}")
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: ParamVector, grads: ParamVector) -> tuple[AdamState, ParamVector]:
    """One Adam update. Returns the advanced state and new parameters; inputs are untouched."""
    n = len(params)
    if len(grads) != n or state.m.size != n:
        raise ShapeError(
            f"adam_step: params {n}, grads {len(grads)}, state {state.m.size} differ in length"
        )
    g = grads.values
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_values = params.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), params.with_values(new_values)
