"""Adam optimizer over a :class:`~dbmtl.tensor.ParamStore`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError
from .tensor import ParamStore


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError("learning rate must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigurationError("Adam epsilon must be > 0")


def adam_step(params: ParamStore, state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place.

    Gradients are read but not cleared; the caller zeroes them.
    """
    for name in params:
        if params.grad(name) is None:
            raise ContractError(f"no gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name in params:
        g = params.grad(name)
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        params[name] = params[name] - step
