"""AdamW: Adam moments with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class OptimizerState:
    lr: float = 1e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: dict, grads: dict, state: OptimizerState, lr_scale: dict | None = None):
    """One AdamW update. Returns ``(new_params, new_state)``; inputs are untouched.

    Parameters without an entry in ``grads`` are left as they are.
    ``lr_scale`` optionally multiplies the learning rate per parameter name.
    """
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m, v = dict(state.m), dict(state.v)
    out = dict(params)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {list(g.shape)}, parameter {list(p.shape)}")
        m[name] = b1 * m.get(name, 0.0) + (1 - b1) * g
        v[name] = b2 * v.get(name, 0.0) + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1 ** t)
        v_hat = v[name] / (1 - b2 ** t)
        lr = state.lr * (1.0 if lr_scale is None else lr_scale.get(name, 1.0))
        out[name] = p - lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p)
    return out, replace(state, step=t, m=m, v=v)
