"""Property benches run by ``latrisk verify``: each suite returns a pass flag and a text report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .actor import Actor, ActorConfig, actor_loss
from .contraction import aliasing_regret, contextual_regret, verify_contraction
from .critic import CriticConfig, QuantileCritic, TauBatch, huber_quantile_loss, q_upper_tail, td_error_matrix
from .encoder import Encoder, EncoderConfig, combine_arrays, encoder_loss, kl_tensor, reparameterize
from .envs.bandit import aliasing_tasks
from .numerics import T, Tensor, grad
from .numerics.tensor import as_tensor

SUITES = ("contraction", "aliasing", "monotone-tail", "gradients", "pog")


@dataclass
class SuiteReport:
    name: str
    ok: bool = True
    lines: list = field(default_factory=list)

    def check(self, cond: bool, msg: str) -> bool:
        self.lines.append(("ok   " if cond else "FAIL ") + msg)
        self.ok = self.ok and bool(cond)
        return bool(cond)

    def text(self) -> str:
        return f"suite {self.name}: {'pass' if self.ok else 'FAIL'}\n" + "\n".join(self.lines) + "\n"


# -- finite differences ---------------------------------------------------------

@dataclass
class GradCheck:
    max_rel: float
    checked: int
    skipped: int


def finite_difference_check(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    rng: np.random.Generator,
    h: float = 1e-5,
    per_array: int = 12,
    floor: float = 1e-6,
    kink_tol: float = 1e-3,
) -> GradCheck:
    """Compare tape gradients with central differences on sampled coordinates.

    A coordinate whose central differences at ``h`` and ``h / 4`` disagree by
    more than ``kink_tol`` (relative) sits next to a kink and is skipped.
    Relative error is ``|g - fd| / max(|g|, |fd|, floor)``.
    """
    names = list(params)
    leaves = {k: Tensor(np.array(params[k], dtype=float), requires_grad=True) for k in names}
    loss = loss_fn(leaves)
    gs = dict(zip(names, grad(loss, [leaves[k] for k in names])))

    def value(k, idx, dx):
        arr = {n: np.array(params[n], dtype=float) for n in names}
        arr[k][idx] += dx
        return as_tensor(loss_fn({n: Tensor(arr[n]) for n in names})).item()

    worst, checked, skipped = 0.0, 0, 0
    for k in names:
        size = np.size(params[k])
        picks = rng.choice(size, size=min(per_array, size), replace=False)
        for flat in picks:
            idx = np.unravel_index(int(flat), np.shape(params[k]))
            fd = (value(k, idx, h) - value(k, idx, -h)) / (2 * h)
            fd2 = (value(k, idx, h / 4) - value(k, idx, -h / 4)) / (h / 2)
            if abs(fd - fd2) > kink_tol * max(abs(fd), abs(fd2), floor):
                skipped += 1
                continue
            g = float(gs[k][idx])
            worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), floor))
            checked += 1
    return GradCheck(worst, checked, skipped)


def _small_critic_cfg() -> CriticConfig:
    return CriticConfig(d_model=8, feature_layers=1, d_tau=4, n_blocks=1, n_critics=2, n_tau=4, n_tau_target=3)


def gradient_blocks(seed: int = 0) -> dict[str, tuple[Callable, dict]]:
    """Loss closures and parameters for every trainable block."""
    rng = np.random.default_rng(seed)
    obs, act, dz, B, n_ctx = 2, 1, 2, 4, 3
    ecfg = EncoderConfig(d_z=dz, hidden=(6,))
    enc = Encoder(obs, act, ecfg, rng)
    ccfg = _small_critic_cfg()
    crit_r = QuantileCritic(obs + act + dz, ccfg, rng)
    crit_c = QuantileCritic(obs + act + dz, ccfg, rng)
    actor = Actor(obs, dz, act, ActorConfig(hidden=(6,), k_samples=3), rng)

    x = rng.normal(size=(B, enc.in_dim))
    w_mu, w_var = rng.normal(size=(B, dz)), rng.normal(size=(B, dz))
    s, a, z = rng.normal(size=(B, obs)), rng.uniform(-0.9, 0.9, size=(B, act)), rng.normal(size=(B, dz))
    taus_i = rng.uniform(size=ccfg.n_tau)
    target = rng.normal(0.0, 2.0, size=(B, ccfg.n_tau_target))
    ctx = rng.normal(size=(B, n_ctx, enc.in_dim))
    eps = rng.normal(size=(B, dz))

    def enc_factor(p):
        mu, var = enc.factor_tensors(p, x)
        return T.tsum(mu * w_mu) + T.tsum(var * w_var)

    def critic_loss(critic):
        def f(p):
            pred = critic.forward(p, s, a, z, taus_i)
            return huber_quantile_loss(td_error_matrix(pred, target), taus_i, ccfg.kappa)

        return f

    def act_loss(p):
        return actor_loss(actor, p, crit_r, crit_c, s, z, 0.7, 3, np.random.default_rng(1))

    def full_encoder(p):
        m, v = enc.posterior_tensors(p, ctx)
        zt = reparameterize(m, v, eps)
        lr_ = huber_quantile_loss(td_error_matrix(crit_r(s, a, zt, taus_i), target), taus_i)
        lc_ = huber_quantile_loss(td_error_matrix(crit_c(s, a, zt, taus_i), target), taus_i)
        return encoder_loss(lr_, lc_, kl_tensor(m, v), ecfg)

    def action_grad(p):
        return T.tsum(crit_c(s, p["a"], z, taus_i))

    return {
        "encoder factor net": (enc_factor, dict(enc.params.items())),
        "reward critic": (critic_loss(crit_r), dict(crit_r.params.items())),
        "cost critic": (critic_loss(crit_c), dict(crit_c.params.items())),
        "actor": (act_loss, dict(actor.params.items())),
        "full encoder loss": (full_encoder, dict(enc.params.items())),
        "critic action gradient": (action_grad, {"a": a}),
    }


def suite_gradients(seed: int = 0, tol: float = 1e-4) -> SuiteReport:
    rep = SuiteReport("gradients")
    rng = np.random.default_rng(seed + 100)
    for name, (fn, params) in gradient_blocks(seed).items():
        res = finite_difference_check(fn, params, rng)
        rep.check(res.max_rel < tol and res.checked > 0,
                  f"{name}: max rel err {res.max_rel:.3e} over {res.checked} coords ({res.skipped} near kinks)")
    return rep


# -- other suites -------------------------------------------------------------------

def suite_contraction(seed: int = 0, gamma: float = 0.9, trials: int = 100, iterations: int = 30) -> SuiteReport:
    rep = SuiteReport("contraction")
    res = verify_contraction(trials=trials, iterations=iterations, gamma=gamma, seed=seed)
    rep.check(res.max_ratio <= gamma + 1e-9, f"max sup-W1 ratio {res.max_ratio:.6f} <= gamma {gamma}")
    rep.check(not any(v["check"] == "decay" for v in res.violations),
              f"{len(res.decay)} decay points under the gamma^k envelope")
    rep.check(res.ok, f"{len(res.violations)} violations")
    rep.lines.append(res.text())
    return rep


def suite_aliasing(deltas=(0.2, 1.0, 5.0), step: float = 1e-3) -> SuiteReport:
    rep = SuiteReport("aliasing")
    for d in deltas:
        b = aliasing_tasks(d)
        val, p = aliasing_regret(b, step)
        rep.check(abs(val - d / 2) <= step * d, f"delta={d}: minmax regret {val:.6f} at p={p:.3f} (floor {d / 2})")
        ctx = contextual_regret(b)
        rep.check(max(ctx) == 0.0, f"delta={d}: contextual regret {ctx}")
    return rep


class QuantileOracle:
    """Critic-shaped wrapper around a quantile function ``f(tau)`` ignoring (s, a, z)."""

    def __init__(self, f: Callable[[np.ndarray], np.ndarray]):
        self.f = f

    def __call__(self, s, a, z, taus) -> Tensor:
        tau = taus.taus if isinstance(taus, TauBatch) else np.asarray(taus)
        B = np.shape(as_tensor(s).data)[0]
        return Tensor(np.broadcast_to(self.f(tau), (B, tau.shape[-1])).copy())


MONOTONE_ORACLES = {
    "identity": lambda t: t,
    "square": lambda t: t**2,
    "exp": lambda t: np.exp(3 * t),
    "step": lambda t: (t > 0.6).astype(float),
    "lognormal": lambda t: np.exp(0.5 * np.sqrt(2) * _erfinv(2 * np.clip(t, 1e-12, 1 - 1e-12) - 1)),
}


def _erfinv(y: np.ndarray) -> np.ndarray:
    from scipy.special import erfinv

    return erfinv(y)


def suite_monotone_tail(seed: int = 0, n_u: int = 10_000) -> SuiteReport:
    rep = SuiteReport("monotone-tail")
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=n_u)
    etas = [round(0.1 * k, 1) for k in range(10)]
    s = np.zeros((1, 1))
    for name, f in MONOTONE_ORACLES.items():
        q = [float(q_upper_tail(QuantileOracle(f), s, s, s, e, u)[0]) for e in etas]
        rep.check(all(b >= a for a, b in zip(q, q[1:])), f"{name}: Q^eta non-decreasing over {etas}")
    q5 = float(q_upper_tail(QuantileOracle(MONOTONE_ORACLES["identity"]), s, s, s, 0.5, u)[0])
    sigma = 0.5 / math.sqrt(12 * n_u)
    rep.check(abs(q5 - 0.75) <= 3 * sigma, f"f(tau)=tau: Q^0.5 = {q5:.5f}, target 0.75 +- {3 * sigma:.5f}")
    return rep


def numeric_product(mu: np.ndarray, var: np.ndarray, points: int = 400_001) -> tuple[float, float]:
    """Mean and variance of the normalised product of 1-D Gaussian densities by quadrature."""
    prec = 1.0 / var
    m0 = np.sum(prec * mu) / np.sum(prec)
    w = 12.0 / math.sqrt(np.sum(prec))
    x = np.linspace(m0 - w, m0 + w, points)
    logp = -0.5 * np.sum((x[:, None] - mu[None, :]) ** 2 / var[None, :], axis=1)
    p = np.exp(logp - logp.max())
    dx = x[1] - x[0]
    z = np.sum(p) * dx
    mean = np.sum(x * p) * dx / z
    v = np.sum((x - mean) ** 2 * p) * dx / z
    return float(mean), float(v)


def suite_pog(seed: int = 0, trials: int = 20, tol: float = 1e-6) -> SuiteReport:
    rep = SuiteReport("pog")
    rng = np.random.default_rng(seed)
    worst_m = worst_v = 0.0
    for _ in range(trials):
        n, d = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        mu = rng.normal(0.0, 2.0, size=(n, d))
        var = rng.uniform(0.2, 3.0, size=(n, d))
        post = combine_arrays(mu, var)
        for k in range(d):
            m, v = numeric_product(mu[:, k], var[:, k])
            worst_m = max(worst_m, abs(m - post.mean[k]))
            worst_v = max(worst_v, abs(v - post.var[k]))
    rep.check(worst_m < tol, f"posterior mean vs quadrature: max abs err {worst_m:.2e}")
    rep.check(worst_v < tol, f"posterior variance vs quadrature: max abs err {worst_v:.2e}")
    return rep


def run_suite(name: str, seed: int = 0, gamma: float = 0.9) -> SuiteReport:
    if name == "contraction":
        return suite_contraction(seed, gamma)
    if name == "aliasing":
        return suite_aliasing()
    if name == "monotone-tail":
        return suite_monotone_tail(seed)
    if name == "gradients":
        return suite_gradients(seed)
    if name == "pog":
        return suite_pog(seed)
    raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
