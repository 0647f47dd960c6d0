"""Context encoder: per-transition Gaussian factors combined by precision addition."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envs.base import Transition, stack_transitions
from .numerics import T, ParamStore, Tensor, init_mlp, mlp_forward


@dataclass
class EncoderConfig:
    d_z: int = 5
    hidden: tuple = (256, 256)
    beta_r: float = 1.0
    beta_c: float = 1.0
    beta_kl: float = 0.1
    var_floor: float = 1e-6

    def __post_init__(self):
        for k in ("beta_r", "beta_c", "beta_kl"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        if self.d_z < 1:
            raise ValueError("d_z must be >= 1")


@dataclass(frozen=True)
class GaussianFactor:
    mean: np.ndarray
    var: np.ndarray


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    var: np.ndarray
    n: int = 0

    @classmethod
    def prior(cls, d_z: int) -> "GaussianPosterior":
        return cls(np.zeros(d_z), np.ones(d_z), 0)

    def to_record(self) -> dict:
        return {"mean": self.mean.tolist(), "variance": self.var.tolist(), "N": self.n}

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + np.sqrt(self.var) * rng.standard_normal(self.mean.shape)


def transition_features(ts) -> np.ndarray:
    """Rows ``[s, s', a, r, c]`` of width ``2 d_s + d_a + 2``."""
    cols = ts if isinstance(ts, dict) else stack_transitions(list(ts))
    return np.concatenate(
        [cols["s"], cols["s_next"], cols["a"], cols["r"][..., None], cols["c"][..., None]], axis=-1
    )


class Encoder:
    """``f_phi``: one MLP emitting a mean and a softplus variance per transition."""

    def __init__(self, obs_dim: int, act_dim: int, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.in_dim = 2 * obs_dim + act_dim + 2
        self.widths = (self.in_dim, *cfg.hidden, 2 * cfg.d_z)
        self.params = ParamStore()
        init_mlp(self.params, "", self.widths, rng)

    @property
    def d_z(self) -> int:
        return self.cfg.d_z

    # -- tape level ------------------------------------------------------
    def factor_tensors(self, params, x) -> tuple[Tensor, Tensor]:
        """Factor means and variances for features ``x`` of shape (..., in_dim)."""
        out = mlp_forward(params, x, self.widths, "relu")
        d = self.cfg.d_z
        mu = out[..., :d]
        var = T.softplus(out[..., d:]) + self.cfg.var_floor
        return mu, var

    def posterior_tensors(self, params, x) -> tuple[Tensor, Tensor]:
        """Product of the factors along axis -2 (the context axis)."""
        mu, var = self.factor_tensors(params, x)
        prec = 1.0 / var
        p_sum = T.tsum(prec, axis=-2)
        v_post = 1.0 / p_sum
        m_post = v_post * T.tsum(prec * mu, axis=-2)
        return m_post, v_post

    # -- numpy level -----------------------------------------------------
    def factor_forward(self, t: Transition | Sequence[Transition]) -> GaussianFactor | list:
        single = isinstance(t, Transition)
        ts = [t] if single else list(t)
        mu, var = self.factor_tensors(self.params.constants(), transition_features(ts))
        fs = [GaussianFactor(mu.data[i].copy(), var.data[i].copy()) for i in range(len(ts))]
        return fs[0] if single else fs

    def factor_arrays(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu, var = self.factor_tensors(self.params.constants(), x)
        return mu.data, var.data

    def posterior(self, ts: Sequence[Transition]) -> GaussianPosterior:
        if len(ts) == 0:
            return GaussianPosterior.prior(self.d_z)
        mu, var = self.factor_arrays(transition_features(ts))
        return combine_arrays(mu, var)


def combine_arrays(mu: np.ndarray, var: np.ndarray) -> GaussianPosterior:
    """Precision-weighted product of factors held as (n, d) arrays.

    Sums use ``math.fsum`` so the result does not depend on factor order.
    """
    n, d = mu.shape
    if n == 0:
        return GaussianPosterior.prior(d)
    prec = 1.0 / var
    wm = prec * mu
    p = np.array([math.fsum(prec[:, k]) for k in range(d)])
    s = np.array([math.fsum(wm[:, k]) for k in range(d)])
    v = 1.0 / p
    return GaussianPosterior(v * s, v, n)


def combine_factors(factors: Sequence[GaussianFactor], d_z: int | None = None) -> GaussianPosterior:
    """Posterior from independent factors; no factors gives the N(0, I) prior."""
    if len(factors) == 0:
        if d_z is None:
            raise ValueError("d_z is required to build the prior from an empty factor list")
        return GaussianPosterior.prior(d_z)
    dims = {f.mean.shape for f in factors}
    if len(dims) != 1:
        raise ValueError(f"factors disagree on dimension: {sorted(dims)}")
    mu = np.stack([f.mean for f in factors])
    var = np.stack([f.var for f in factors])
    return combine_arrays(mu, var)


def kl_to_prior(post: GaussianPosterior) -> float:
    """KL(N(mean, diag var) || N(0, I))."""
    m, v = post.mean, post.var
    return float(0.5 * np.sum(v + m * m - 1.0 - np.log(v)))


def kl_tensor(mean: Tensor, var: Tensor) -> Tensor:
    """Batched KL to the standard normal prior, averaged over leading axes."""
    per = 0.5 * T.tsum(var + mean * mean - 1.0 - T.log(var), axis=-1)
    return T.mean(per)


def reparameterize(mean: Tensor, var: Tensor, eps: np.ndarray) -> Tensor:
    return mean + T.sqrt(var) * eps


def encoder_loss(loss_r, loss_c, kl, cfg: EncoderConfig):
    """``beta_r * L_r + beta_c * L_c + beta_kl * KL``; works on tensors or floats."""
    return cfg.beta_r * loss_r + cfg.beta_c * loss_c + cfg.beta_kl * kl


def latent_estimate(post: GaussianPosterior) -> np.ndarray:
    return post.mean.copy()
