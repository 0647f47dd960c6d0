"""Implicit quantile critics with cosine tau embedding and residual heads."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .numerics import T, ParamStore, Tensor, init_mlp, mlp_forward
from .numerics.tensor import as_tensor


@dataclass
class CriticConfig:
    d_model: int = 512
    feature_layers: int = 2
    d_tau: int = 64
    n_blocks: int = 2
    n_critics: int = 2
    n_tau: int = 32
    n_tau_target: int = 32
    kappa: float = 1.0
    polyak: float = 0.005

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.n_tau < 1 or self.n_tau_target < 1:
            raise ValueError("tau sample counts must be >= 1")
        if not 0.0 <= self.polyak <= 1.0:
            raise ValueError("polyak must lie in [0, 1]")


@dataclass(frozen=True)
class TauBatch:
    """Quantile levels plus the law they were drawn from.

    For ``uppertail`` the levels are ``eta + (1 - eta) * u`` and ``u`` is kept so
    the same noise can be reused at another ``eta``.
    """

    taus: np.ndarray
    law: str = "uniform01"
    eta: float = 0.0
    u: np.ndarray | None = None

    def __post_init__(self):
        if self.law not in ("uniform01", "uppertail"):
            raise ValueError(f"unknown tau law {self.law!r}")
        if np.any(self.taus < 0) or np.any(self.taus > 1):
            raise ValueError("tau values must lie in [0, 1]")

    @classmethod
    def uniform(cls, n: int, rng: np.random.Generator) -> "TauBatch":
        u = rng.uniform(0.0, 1.0, size=n)
        return cls(u, "uniform01", 0.0, u)

    @classmethod
    def upper_tail(cls, eta: float, u: np.ndarray) -> "TauBatch":
        if not 0.0 <= eta < 1.0:
            raise ValueError(f"eta must lie in [0, 1), got {eta}")
        u = np.asarray(u, dtype=float)
        return cls(eta + (1.0 - eta) * u, "uppertail", float(eta), u)

    def __len__(self) -> int:
        return self.taus.shape[-1]


def _taus(taus) -> np.ndarray:
    return taus.taus if isinstance(taus, TauBatch) else np.asarray(taus, dtype=float)


def cosine_basis(taus: np.ndarray, d_tau: int) -> np.ndarray:
    """``cos(pi * i * tau)`` for ``i = 0 .. d_tau - 1``, appended as a last axis."""
    i = np.arange(d_tau, dtype=float)
    return np.cos(np.pi * taus[..., None] * i)


class QuantileCritic:
    """``Z(s, a, z; tau)``: a shared feature trunk and ``n_critics`` residual heads.

    Calling the critic returns the head-mean quantile values of shape (B, T).
    ``target`` holds the slowly tracking copy used for bootstrapping.
    """

    def __init__(self, in_dim: int, cfg: CriticConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.in_dim = in_dim
        d = cfg.d_model
        self.feat_widths = (in_dim,) + (d,) * cfg.feature_layers
        self.params = ParamStore()
        init_mlp(self.params, "feat/", self.feat_widths, rng)
        init_mlp(self.params, "tau/", (cfg.d_tau, d), rng)
        for k in range(cfg.n_critics):
            init_mlp(self.params, f"m{k}/in/", (d, d), rng)
            for j in range(cfg.n_blocks):
                init_mlp(self.params, f"m{k}/blk{j}/", (d, d, d), rng)
            init_mlp(self.params, f"m{k}/head/", (d, 1), rng)
        self.target = self.params.copy()

    def members(self, params: Mapping, s, a, z, taus) -> list[Tensor]:
        """Per-head quantile values, each (B, T)."""
        tau = _taus(taus)
        cfg = self.cfg
        a_t = as_tensor(a)
        x = T.concat([as_tensor(s), a_t, as_tensor(z)], axis=-1)
        h = mlp_forward(params, x, self.feat_widths, "relu", "relu", prefix="feat/")
        B = h.shape[0]
        basis = cosine_basis(tau, cfg.d_tau)
        e = T.relu(T.matmul(basis, as_tensor(params["tau/W0"])) + params["tau/b0"])
        if tau.ndim == 1:
            n_t = tau.shape[0]
            prod = T.expand_dims(h, 1) * T.expand_dims(e, 0)
        else:
            n_t = tau.shape[-1]
            prod = T.expand_dims(h, 1) * e
        flat = T.reshape(prod, (B * n_t, cfg.d_model))
        out = []
        for k in range(cfg.n_critics):
            y = T.relu(T.matmul(flat, as_tensor(params[f"m{k}/in/W0"])) + params[f"m{k}/in/b0"])
            for j in range(cfg.n_blocks):
                p = f"m{k}/blk{j}/"
                inner = T.relu(T.matmul(y, as_tensor(params[p + "W0"])) + params[p + "b0"])
                y = y + T.matmul(inner, as_tensor(params[p + "W1"])) + params[p + "b1"]
            q = T.matmul(y, as_tensor(params[f"m{k}/head/W0"])) + params[f"m{k}/head/b0"]
            out.append(T.reshape(q, (B, n_t)))
        return out

    def forward(self, params: Mapping, s, a, z, taus) -> Tensor:
        ms = self.members(params, s, a, z, taus)
        acc = ms[0]
        for m in ms[1:]:
            acc = acc + m
        return acc * (1.0 / len(ms))

    def __call__(self, s, a, z, taus) -> Tensor:
        return self.forward(self.params.constants(), s, a, z, taus)

    def target_call(self, s, a, z, taus) -> Tensor:
        return self.forward(self.target.constants(), s, a, z, taus)


CriticFn = Callable[..., Tensor]


def critic_forward(critic: CriticFn, s, a, z, taus) -> np.ndarray:
    return np.asarray(as_tensor(critic(s, a, z, taus)).data)


def td_targets(target_fn: CriticFn, s_next, a_next, z, r, terminal, gamma: float, taus_j) -> np.ndarray:
    """``r + gamma * (1 - terminal) * Z_target(s', a', z; tau_j)``, shape (B, N')."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    zt = as_tensor(target_fn(s_next, a_next, z, taus_j)).data
    mask = 1.0 - np.asarray(terminal, dtype=float)
    return np.asarray(r, dtype=float)[:, None] + gamma * mask[:, None] * zt


def td_error_matrix(pred, target: np.ndarray) -> Tensor:
    """``delta[b, i, j] = target[b, j] - pred[b, i]``."""
    return T.expand_dims(as_tensor(target), 1) - T.expand_dims(as_tensor(pred), 2)


def td_errors(
    critic_fn: CriticFn,
    target_fn: CriticFn,
    actor_fn: Callable,
    batch: Mapping[str, np.ndarray],
    z,
    gamma: float,
    taus_i,
    taus_j,
    head: str = "r",
) -> Tensor:
    """Full quantile TD-error matrix (B, N, N') for the reward (``r``) or cost (``c``) head."""
    a_next = actor_fn(batch["s_next"], z)
    y = td_targets(
        target_fn, batch["s_next"], a_next, z, batch[head], batch.get("terminal", np.zeros(len(batch[head]))),
        gamma, taus_j,
    )
    return td_error_matrix(critic_fn(batch["s"], batch["a"], z, taus_i), y)


def huber_quantile_loss(delta, taus_i, kappa: float = 1.0) -> Tensor:
    """Mean over all entries of ``|tau_i - 1{delta < 0}| * huber(delta) / kappa``.

    ``delta`` has shape (..., N, N'); ``taus_i`` is (N,) or broadcastable to (..., N).
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    d = as_tensor(delta)
    tau = _taus(taus_i)
    w = np.abs(tau[..., :, None] - (d.data < 0).astype(float))
    return T.mean(T.huber(d, kappa) * w) * (1.0 / kappa)


def q_mean(critic: CriticFn, s, a, z, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    tb = TauBatch.uniform(n_samples, rng)
    return critic_forward(critic, s, a, z, tb).mean(axis=-1)


def q_upper_tail_tensor(critic: CriticFn, s, a, z, eta: float, u) -> Tensor:
    tb = TauBatch.upper_tail(eta, u)
    return T.mean(as_tensor(critic(s, a, z, tb)), axis=-1)


def q_upper_tail(critic: CriticFn, s, a, z, eta: float, u) -> np.ndarray:
    """Mean cost quantile over ``tau = eta + (1 - eta) u`` for the fixed batch ``u``."""
    return q_upper_tail_tensor(critic, s, a, z, eta, u).data


def polyak_update(target: ParamStore, online: ParamStore, rho: float) -> None:
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    for k, v in online.items():
        if rho == 1.0:
            target.set(k, v)
        elif rho > 0.0:
            target.set(k, (1.0 - rho) * target[k] + rho * v)


def target_sync(critic: QuantileCritic, rho: float | None = None) -> None:
    polyak_update(critic.target, critic.params, critic.cfg.polyak if rho is None else rho)


def dump_quantiles(path, reward_critic: CriticFn, cost_critic: CriticFn, s, a, z, taus) -> None:
    """CSV of (probe, tau, Z_r, Z_c) at each probe state."""
    tau = _taus(taus)
    zr = critic_forward(reward_critic, s, a, z, tau)
    zc = critic_forward(cost_critic, s, a, z, tau)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["probe", "tau", "Z_r", "Z_c"])
        for b in range(zr.shape[0]):
            for i, t in enumerate(tau):
                w.writerow([b, repr(float(t)), repr(float(zr[b, i])), repr(float(zc[b, i]))])
