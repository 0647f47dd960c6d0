"""Deterministic latent-conditioned actor and the PID Lagrange multiplier."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .critic import CriticFn, TauBatch
from .numerics import T, ParamStore, Tensor, init_mlp, mlp_forward
from .numerics.tensor import as_tensor


@dataclass
class ActorConfig:
    hidden: tuple = (256, 256)
    k_samples: int = 32

    def __post_init__(self):
        if self.k_samples < 1:
            raise ValueError("k_samples must be >= 1")


class Actor:
    """``pi(s, z) = tanh(MLP([s, z]))``, so actions stay in ``[-1, 1]^d_a``."""

    def __init__(self, obs_dim: int, d_z: int, act_dim: int, cfg: ActorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.d_z = d_z
        self.act_dim = act_dim
        self.widths = (obs_dim + d_z, *cfg.hidden, act_dim)
        self.params = ParamStore()
        init_mlp(self.params, "", self.widths, rng)

    def forward(self, params, s, z) -> Tensor:
        x = T.concat([as_tensor(s), as_tensor(z)], axis=-1)
        return mlp_forward(params, x, self.widths, "relu", "tanh")

    def __call__(self, s, z) -> np.ndarray:
        return actor_forward(self, s, z)


def actor_forward(actor: Actor, s, z) -> np.ndarray:
    s = np.atleast_2d(np.asarray(s, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return actor.forward(actor.params.constants(), s, z).data


def actor_loss(
    actor: Actor,
    params,
    reward_critic: CriticFn,
    cost_critic: CriticFn,
    s,
    z,
    lam: float,
    k: int,
    rng: np.random.Generator,
) -> Tensor:
    """``-(1/K) E[sum_k Z_r(s, pi, z; tau_r) - lam * sum_k Z_c(s, pi, z; tau_c)]``.

    Reward and cost levels are drawn independently.  Only ``params`` (the actor's
    leaves) carry gradient; the critics are evaluated on constants.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    a = actor.forward(params, s, z)
    tr = TauBatch.uniform(k, rng)
    tc = TauBatch.uniform(k, rng)
    zr = as_tensor(reward_critic(s, a, z, tr))
    zc = as_tensor(cost_critic(s, a, z, tc))
    return -T.mean(T.tsum(zr, axis=-1) - lam * T.tsum(zc, axis=-1)) * (1.0 / k)


@dataclass(frozen=True)
class LagrangeState:
    lam: float = 0.0
    integral: float = 0.0
    e_prev: float = 0.0
    kp: float = 0.1
    ki: float = 0.003
    kd: float = 0.001
    e: float = 0.0

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be >= 0")


def pid_update(state: LagrangeState, j_c: float, d: float) -> LagrangeState:
    """One projected PID step on the constraint error ``e = j_c - d``."""
    e = float(j_c) - float(d)
    integral = state.integral + e
    delta = state.kp * e + state.ki * integral + state.kd * (e - state.e_prev)
    lam = max(0.0, state.lam + delta)
    return replace(state, lam=lam, integral=integral, e_prev=e, e=e)
