"""A stationary diagnostic CMDP family with closed-form cost structure.

Each step the agent sees an exogenous load ``x ~ U(0, 1)`` and picks
``a in [-1, 1]``; with throttle ``u = (1 + a) / 2``

    r = u * (0.5 + x) - u^2 / 2
    c = u * hazard * LogNormal(-noise^2 / 2, noise) + slope . z + offset

``hazard`` is the hidden environment factor.  ``slope . z`` charges cost
affinely in the latent the agent conditions on, so for any policy that
ignores ``z`` the discounted cost is affine in ``z`` with Lipschitz constant
``|slope| * sum_t gamma^t``.  Training families use ``slope = 0``; ``offset``
keeps the affine term non-negative over the latents of interest (cost is
clamped at 0 as a guard).  The reward is concave in ``u`` so the constrained
optimum ``u = clip(0.5 + x - lambda * hazard, 0, 1)`` is interior.

Episodes are truncated at ``horizon`` without a terminal flag: the value
function is stationary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .base import Transition
from .domain import DomainDistribution


@dataclass(frozen=True)
class DiagnosticEnv:
    hazard: float = 1.0
    slope: tuple = ()
    horizon: int = 20
    gamma: float = 0.95
    noise: float = 0.3
    offset: float = 0.0

    obs_dim = 1
    act_dim = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.hazard <= 0:
            raise ValueError("hazard must be positive")

    def slope_vector(self, d_z: int) -> np.ndarray:
        if len(self.slope) == 0:
            return np.zeros(d_z)
        s = np.asarray(self.slope, dtype=float)
        if s.shape != (d_z,):
            raise ValueError(f"slope has length {s.size}, latent has {d_z}")
        return s

    def discount_sum(self) -> float:
        return float(sum(self.gamma**t for t in range(self.horizon)))

    def lipschitz(self) -> float:
        """Analytic cost Lipschitz constant in ``z`` for ``z``-independent policies."""
        return float(np.linalg.norm(np.asarray(self.slope, dtype=float))) * self.discount_sum()

    def initial_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=(n, 1))

    def step_batch(self, s: np.ndarray, a: np.ndarray, z: np.ndarray, rng: np.random.Generator, hazard=None):
        """Vectorised step; ``s`` (B, 1), ``a`` (B, 1), ``z`` (B, d_z).

        ``hazard`` optionally overrides the factor per row, so one call can
        advance rollouts from many environments of the same family.
        """
        u = (1.0 + np.clip(a[:, 0], -1.0, 1.0)) / 2.0
        x = s[:, 0]
        h = self.hazard if hazard is None else np.asarray(hazard, dtype=float)
        eps = rng.standard_normal(len(x))
        mult = np.exp(self.noise * eps - 0.5 * self.noise**2)
        r = u * (0.5 + x) - 0.5 * u * u
        c = u * h * mult + z @ self.slope_vector(z.shape[1]) + self.offset
        s_next = rng.uniform(0.0, 1.0, size=(len(x), 1))
        return r, np.maximum(c, 0.0), s_next


class DiagnosticInstance:
    """Stateful single-environment wrapper used by the trainer and deployment loop."""

    def __init__(self, env: DiagnosticEnv, seed: int = 0):
        self.env = env
        self.obs_dim = 1
        self.act_dim = 1
        self.horizon = env.horizon
        self._rng = np.random.default_rng(seed)
        self._s = None
        self._t = 0

    def reset(self) -> np.ndarray:
        self._s = self.env.initial_states(1, self._rng)[0]
        self._t = 0
        return self._s.copy()

    def step(self, a, z=None):
        a = np.clip(np.asarray(a, dtype=float).reshape(1, 1), -1.0, 1.0)
        zz = np.zeros((1, max(len(self.env.slope), 1))) if z is None else np.asarray(z, dtype=float).reshape(1, -1)
        r, c, s2 = self.env.step_batch(self._s.reshape(1, 1), a, zz, self._rng)
        tr = Transition(self._s.copy(), a[0].copy(), s2[0].copy(), float(r[0]), float(c[0]), False)
        self._s = s2[0]
        self._t += 1
        return tr, self._t >= self.env.horizon


@dataclass(frozen=True)
class DiagnosticFamily:
    """Domain-randomised diagnostic environments: hazard drawn from ``box``."""

    box: DomainDistribution = field(
        default_factory=lambda: DomainDistribution({"hazard": (0.5, 1.5)}, label="train")
    )
    slope: tuple = ()
    horizon: int = 20
    gamma: float = 0.95
    noise: float = 0.3
    offset: float = 0.0

    obs_dim = 1
    act_dim = 1

    def sample(self, rng: np.random.Generator) -> DiagnosticEnv:
        return self.make(self.box.sample(rng)["hazard"])

    def make(self, hazard: float) -> DiagnosticEnv:
        return DiagnosticEnv(hazard, self.slope, self.horizon, self.gamma, self.noise, self.offset)

    def instance(self, env: DiagnosticEnv, seed: int) -> DiagnosticInstance:
        return DiagnosticInstance(env, seed)


class RolloutEstimate(NamedTuple):
    j_r: float
    j_c: float
    se_r: float
    se_c: float
    j_c_undiscounted: float
    se_c_undiscounted: float
    episodes: int


def diagnostic_rollout(
    env: DiagnosticEnv,
    policy: Callable[[np.ndarray, np.ndarray], np.ndarray],
    z,
    rng: np.random.Generator,
    episodes: int = 64,
) -> RolloutEstimate:
    """Monte Carlo discounted reward and cost of ``policy(s, z)`` run on ``env``.

    All ``episodes`` are simulated side by side; ``z`` is held fixed.
    """
    z = np.asarray(z, dtype=float).reshape(1, -1)
    zb = np.repeat(z, episodes, axis=0)
    s = env.initial_states(episodes, rng)
    jr = np.zeros(episodes)
    jc = np.zeros(episodes)
    jcu = np.zeros(episodes)
    disc = 1.0
    for _ in range(env.horizon):
        a = np.asarray(policy(s, zb), dtype=float).reshape(episodes, 1)
        r, c, s = env.step_batch(s, a, zb, rng)
        jr += disc * r
        jc += disc * c
        jcu += c
        disc *= env.gamma
    k = np.sqrt(episodes)
    return RolloutEstimate(
        float(jr.mean()),
        float(jc.mean()),
        float(jr.std(ddof=1) / k) if episodes > 1 else float("nan"),
        float(jc.std(ddof=1) / k) if episodes > 1 else float("nan"),
        float(jcu.mean()),
        float(jcu.std(ddof=1) / k) if episodes > 1 else float("nan"),
        episodes,
    )


def batch_rollout(
    envs: list[DiagnosticEnv],
    policy: Callable[[np.ndarray, np.ndarray], np.ndarray],
    z: np.ndarray,
    rng: np.random.Generator,
    episodes: int = 8,
) -> tuple[np.ndarray, np.ndarray]:
    """Discounted costs and rewards, shape (len(envs), episodes), with one latent row per env.

    All environments must share the family settings (slope, horizon, gamma,
    noise); only ``hazard`` may differ.  Rows are stepped together.
    """
    base = envs[0]
    n = len(envs)
    hz = np.repeat([e.hazard for e in envs], episodes)
    zb = np.repeat(np.asarray(z, dtype=float).reshape(n, -1), episodes, axis=0)
    s = base.initial_states(n * episodes, rng)
    jr = np.zeros(n * episodes)
    jc = np.zeros(n * episodes)
    disc = 1.0
    for _ in range(base.horizon):
        a = np.asarray(policy(s, zb), dtype=float).reshape(-1, 1)
        r, c, s = base.step_batch(s, a, zb, rng, hazard=hz)
        jr += disc * r
        jc += disc * c
        disc *= base.gamma
    return jc.reshape(n, episodes), jr.reshape(n, episodes)


class OracleEncoder:
    """Closed-form per-transition factors for the diagnostic family.

    With ``u > 0`` the hazard part of the cost gives an unbiased Gaussian
    observation of ``log(hazard)``: mean ``log(c / u) + noise^2 / 2`` and
    variance ``noise^2``.  The latent is therefore one-dimensional log hazard.
    """

    d_z = 1

    def __init__(self, noise: float = 0.3, offset: float = 0.0):
        self.noise = noise
        self.offset = offset

    def factor_arrays(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = x[..., 2]
        c = x[..., 4] - self.offset
        u = (1.0 + np.clip(a, -1.0, 1.0)) / 2.0
        mu = np.log(np.maximum(c, 1e-300) / np.maximum(u, 1e-300)) + 0.5 * self.noise**2
        return mu[..., None], np.full(mu.shape + (1,), self.noise**2)

    def posterior(self, ts):
        from ..encoder import combine_arrays, GaussianPosterior, transition_features

        if len(ts) == 0:
            return GaussianPosterior.prior(1)
        return combine_arrays(*self.factor_arrays(transition_features(ts)))


def collect_contexts(
    env: DiagnosticEnv, n: int, rng: np.random.Generator, d_z: int | None = None
) -> list[Transition]:
    """``n`` exploratory transitions (uniform actions, zero latent) from one environment."""
    d = d_z or max(len(env.slope), 1)
    # zero latent: the slope term then only contributes ``offset``
    s = env.initial_states(n, rng)
    a = rng.uniform(-1.0, 1.0, size=(n, 1))
    r, c, s2 = env.step_batch(s, a, np.zeros((n, d)), rng)
    return [Transition(s[i], a[i], s2[i], float(r[i]), float(c[i])) for i in range(n)]


# -- closed-form oracles for pipeline tests -------------------------------------

def _lognormal_quantile(tau: np.ndarray, noise: float) -> np.ndarray:
    from scipy.special import ndtri

    return np.exp(noise * ndtri(np.clip(tau, 1e-12, 1.0 - 1e-12)) - 0.5 * noise**2)


class OracleCostCritic:
    """Stationary per-step cost quantiles divided by ``1 - gamma``, assuming the latent is
    log hazard: ``(u(a) e^z q_LN(tau) + slope . z + offset) / (1 - gamma)``.

    Quantiles are non-decreasing in ``tau`` and increasing in ``a``.
    """

    def __init__(self, env: DiagnosticEnv):
        self.env = env

    def __call__(self, s, a, z, taus):
        from ..critic import _taus
        from ..numerics.tensor import as_tensor

        e = self.env
        tau = _taus(taus)
        zz = np.asarray(as_tensor(z).data, dtype=float)
        q = _lognormal_quantile(tau, e.noise)
        scale = np.exp(zz[:, :1]) * (q[None, :] if tau.ndim == 1 else q)
        shift = (zz @ e.slope_vector(zz.shape[1]) + e.offset)[:, None]
        u = (as_tensor(a) + 1.0) * 0.5
        return (u * scale + shift) * (1.0 / (1.0 - e.gamma))


class OracleRewardCritic:
    """``(u(a) E[0.5 + x] - u(a)^2 / 2) / (1 - gamma)`` at every quantile level."""

    def __init__(self, env: DiagnosticEnv):
        self.env = env

    def __call__(self, s, a, z, taus):
        from ..critic import _taus
        from ..numerics.tensor import as_tensor

        tau = _taus(taus)
        n_t = tau.shape[-1]
        u = (as_tensor(a) + 1.0) * 0.5
        per = u - u * u * 0.5
        return per * (np.ones((1, n_t)) / (1.0 - self.env.gamma))


class ConstantPolicy:
    """Latent-independent fixed action (the affine-cost case behind the analytic Lipschitz constant)."""

    def __init__(self, action: float = 0.5):
        self.action = float(action)

    def __call__(self, s, z):
        return np.full((np.shape(s)[0], 1), self.action)
