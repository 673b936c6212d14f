"""Adam, one state object per parameter tensor."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

LR = 1e-4
BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = LR
    beta1: float = BETA1
    beta2: float = BETA2
    epsilon: float = EPS

    @classmethod
    def for_param(cls, param, **hyper):
        return cls(np.zeros_like(param), np.zeros_like(param), **hyper)


def adam_step(param, grad, state):
    """One bias-corrected Adam update. Returns ``(new_param, state)``.

    ``state`` is updated in place and also returned; ``param`` is not
    modified.
    """
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeError(
            f"adam shapes disagree: param {param.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1 ** state.t)
    v_hat = state.v / (1 - b2 ** state.t)
    step = state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return (param - step).astype(param.dtype), state


@dataclass
class Adam:
    """Adam over a named parameter dict. Only names present in ``grads`` move."""

    lr: float = LR
    beta1: float = BETA1
    beta2: float = BETA2
    epsilon: float = EPS
    states: dict = field(default_factory=dict)

    def step(self, params, grads):
        for name, g in grads.items():
            st = self.states.get(name)
            if st is None:
                st = AdamState.for_param(
                    params[name], lr=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon
                )
                self.states[name] = st
            params[name], _ = adam_step(params[name], g.astype(params[name].dtype, copy=False), st)
        return params
