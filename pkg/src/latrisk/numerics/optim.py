from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .nn import ParamStore, ShapeError


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimState:
    """Adam moments for every parameter of one store."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParamStore, lr: float, **kw) -> "OptimState":
        st = cls(lr=lr, **kw)
        for name, arr in store.items():
            st.m[name] = np.zeros_like(arr)
            st.v[name] = np.zeros_like(arr)
        return st


def adam_step(store: ParamStore, grads: Mapping[str, np.ndarray], state: OptimState) -> None:
    """One in-place Adam update of ``store``.

    The normalised step is clipped to [-1, 1] per coordinate so no parameter
    moves by more than ``lr`` in a single call.
    """
    for name, g in grads.items():
        if name not in store:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != store[name].shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {store[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        step = (m / c1) / (np.sqrt(v / c2) + state.eps)
        step = np.clip(step, -1.0, 1.0)
        store.set(name, store[name] - state.lr * step)
