"""Adam with classic L2 weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from dmpnet.tensor import Tensor

DEFAULT_LR = 5e-5
DEFAULT_WEIGHT_DECAY = 5e-4


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(0, [np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: Optional[AdamState],
    lr: float = DEFAULT_LR,
    weight_decay: float = DEFAULT_WEIGHT_DECAY,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One Adam update. The decay term ``weight_decay * p`` is added to the gradient.

    Parameters are updated in place (their ``data`` arrays are replaced) and
    returned together with the advanced state.
    """
    if len(params) != len(grads):
        raise ValueError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if state is None:
        state = AdamState.for_params(params)
    if len(state.m) != len(params):
        raise ValueError("adam_step: optimizer state does not match the parameter list")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            name = params[i].name or f"#{i}"
            raise FloatingPointError(f"adam_step: non-finite gradient for parameter {name}")

    t = state.step + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        dt = p.data.dtype
        g = g.astype(dt, copy=False)
        if weight_decay:
            g = g + dt.type(weight_decay) * p.data
        m = dt.type(beta1) * state.m[i] + dt.type(1 - beta1) * g
        v = dt.type(beta2) * state.v[i] + dt.type(1 - beta2) * (g * g)
        m_hat = m / dt.type(bc1)
        v_hat = v / dt.type(bc2)
        p.data = (p.data - dt.type(lr) * m_hat / (np.sqrt(v_hat) + dt.type(eps))).astype(dt, copy=False)
        state.m[i] = m
        state.v[i] = v
    state.step = t
    return params, state


class Adam:
    """Stateful convenience wrapper around :func:`adam_step`."""

    def __init__(self, params: Sequence[Tensor], lr=DEFAULT_LR, weight_decay=DEFAULT_WEIGHT_DECAY,
                 betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = AdamState.for_params(self.params)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        adam_step(self.params, grads, self.state, self.lr, self.weight_decay,
                  self.betas[0], self.betas[1], self.eps)
