"""
alignment_engine/optimizer.py
=============================
Bias-corrected Adam over SubspaceModel parameter groups.

adam_step returns a new model and a new AdamState; inputs are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from alignment_engine.objective import GradientSet
from alignment_engine.semantics import SubspaceModel


@dataclass(frozen=True)
class AdamState:
    m: dict[str, np.ndarray]     # first moment per group
    v: dict[str, np.ndarray]     # second moment per group
    t: int = 0

    @classmethod
    def zeros(cls, model: SubspaceModel) -> "AdamState":
        params = model.parameters()
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    model: SubspaceModel,
    state: AdamState,
    grads: GradientSet,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[SubspaceModel, AdamState]:
    t = state.t + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t

    new_params, new_m, new_v = {}, {}, {}
    for name, param in model.parameters().items():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        new_params[name] = param - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[name], new_v[name] = m, v

    return model.with_parameters(new_params), AdamState(m=new_m, v=new_v, t=t)
