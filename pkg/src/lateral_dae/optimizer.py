"""ADADELTA with one accumulator pair per scalar parameter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptState:
    rho: float = 0.99
    epsilon: float = 1e-8
    sq_grad: dict = field(default_factory=dict)
    sq_delta: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, rho=0.99, epsilon=1e-8):
        state = cls(rho, epsilon)
        for name, tensor in params.tensors.items():
            state.sq_grad[name] = np.zeros_like(tensor)
            state.sq_delta[name] = np.zeros_like(tensor)
        return state

    def tensors(self):
        out = {f"Eg2/{k}": v for k, v in self.sq_grad.items()}
        out.update({f"Ed2/{k}": v for k, v in self.sq_delta.items()})
        return out


def adadelta_step(state, params, grads):
    """Apply one in-place ADADELTA update to every tensor in ``grads``.

    Tied matrices are stored once, so a single update keeps both roles in
    sync.  Returns the dict of applied deltas.
    """
    rho, eps = state.rho, state.epsilon
    deltas = {}
    for name, g in grads.items():
        eg2 = state.sq_grad[name]
        ed2 = state.sq_delta[name]
        if eg2.shape != g.shape:
            raise ValueError(f"state shape {eg2.shape} does not match gradient {g.shape} for {name}")
        eg2 *= rho
        eg2 += (1 - rho) * g * g
        delta = -np.sqrt(ed2 + eps) / np.sqrt(eg2 + eps) * g
        ed2 *= rho
        ed2 += (1 - rho) * delta * delta
        params.tensors[name] += delta
        deltas[name] = delta
    return deltas
