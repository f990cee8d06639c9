"""AdamW with decoupled weight decay.

The update is purely functional: `adamw_step` maps (params, grads,
state) to new state and mutates parameter values in place in a fixed
iteration order, so two runs fed identical gradients produce bitwise
identical parameters. Weight decay multiplies the parameter directly
and is not folded into the moment estimates.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["AdamW", "adamw_step", "init_adamw_state"]


def init_adamw_state(params: dict[str, Tensor]) -> dict:
    """Zeroed first/second moments plus a step counter."""
    return {
        "step": 0,
        "m": {k: np.zeros_like(p.data) for k, p in params.items()},
        "v": {k: np.zeros_like(p.data) for k, p in params.items()},
    }


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None],
               state: dict, lr: float, weight_decay: float = 0.01,
               betas=(0.9, 0.999), eps: float = 1e-8) -> dict:
    """One decoupled-weight-decay Adam update, in place.

    Parameters with a missing or None gradient are treated as having a
    zero gradient: their moments still decay and weight decay still
    applies. Keys are visited in sorted order.
    """
    b1, b2 = betas
    step = state["step"] + 1
    bc1 = 1.0 - b1 ** step
    bc2 = 1.0 - b2 ** step
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        else:
            g = np.asarray(g, dtype=p.data.dtype)
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (lr * (m_hat / (np.sqrt(v_hat) + eps))
                   + lr * weight_decay * p.data).astype(p.data.dtype)
    state["step"] = step
    return state


class AdamW:
    """Stateful wrapper around `adamw_step` for a fixed parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 weight_decay: float = 0.01, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = init_adamw_state(params)

    @property
    def step_count(self) -> int:
        return self.state["step"]

    def step(self, grads: dict[str, np.ndarray | None] | None = None):
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items()}
        adamw_step(self.params, grads, self.state, self.lr,
                   self.weight_decay, self.betas, self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
