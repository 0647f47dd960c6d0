"""Online adaptation in a fixed environment: posterior refinement, scheduled risk level
and projected action refinement against the upper-tail cost value."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .calibration import RiskSchedule
from .critic import CriticFn, TauBatch
from .encoder import GaussianPosterior, combine_arrays, latent_estimate, transition_features
from .envs.base import Transition
from .numerics import T, Tensor, grad
from .numerics.tensor import as_tensor

log = logging.getLogger(__name__)


@dataclass
class RefineConfig:
    k_ref: int = 5
    alpha_r: float = 0.01
    alpha_c: float = 0.05
    beta_n: float = 1.0
    n_tau: int = 32
    seed: int = 0
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.k_ref < 0:
            raise ValueError("k_ref must be >= 0")
        if min(self.alpha_r, self.alpha_c, self.beta_n) < 0:
            raise ValueError("step sizes and proximal weight must be >= 0")
        if self.n_tau < 1:
            raise ValueError("n_tau must be >= 1")


@dataclass
class PassCounter:
    """Critic row-passes: one forward (backward) per state row per critic evaluation."""

    forward: int = 0
    backward: int = 0

    def reset(self) -> None:
        self.forward = self.backward = 0


@dataclass
class RefineResult:
    action: np.ndarray
    nominal: np.ndarray
    qc_nominal: np.ndarray
    iterations: np.ndarray
    early_stop: np.ndarray
    fell_back: np.ndarray


def shared_u(cfg: RefineConfig) -> tuple[np.ndarray, np.ndarray]:
    """The (reward, cost) noise batches used by every refinement call under ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    return rng.uniform(0.0, 1.0, cfg.n_tau), rng.uniform(0.0, 1.0, cfg.n_tau)


def _value_and_grad(critic: CriticFn, s, a: np.ndarray, z, taus, need_grad: bool):
    leaf = Tensor(a, requires_grad=need_grad)
    q = T.mean(as_tensor(critic(s, leaf, z, taus)), axis=-1)
    if not need_grad:
        return q.data, None
    (g,) = grad(T.tsum(q), [leaf])
    return q.data, g


def refine_action(
    s,
    z,
    eta: float,
    actor: Callable,
    reward_critic: CriticFn,
    cost_critic: CriticFn,
    d: float,
    cfg: RefineConfig,
    counter: PassCounter | None = None,
    a0: np.ndarray | None = None,
    trace: list | None = None,
) -> RefineResult:
    """Risk-aware projected refinement of the nominal action, one row per state.

    Each row runs: check ``Q_c^eta(a) <= d`` (stop if so), a proximal reward
    ascent step and a cost descent step, both projected onto the action box.
    The result is interpolated toward the refined point by ``clip(eta, 0, 1)``.
    If ``trace`` is a list, a copy of the iterate is appended after every
    completed iteration (no extra critic passes).
    """
    if not eta < 1.0:
        raise ValueError(f"eta must be < 1, got {eta}")
    s = np.atleast_2d(np.asarray(s, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[0] == 1 and s.shape[0] > 1:
        z = np.repeat(z, s.shape[0], axis=0)
    counter = counter if counter is not None else PassCounter()
    a0 = np.asarray(actor(s, z) if a0 is None else a0, dtype=float).reshape(s.shape[0], -1)
    u_r, u_c = shared_u(cfg)
    tau_r = TauBatch(u_r)
    tau_c = TauBatch.upper_tail(max(float(eta), 0.0), u_c)
    lo, hi = cfg.low, cfg.high

    n = s.shape[0]
    a = a0.copy()
    iters = np.zeros(n, dtype=int)
    early = np.zeros(n, dtype=bool)
    fell = np.zeros(n, dtype=bool)
    qc0 = np.full(n, np.nan)
    active = np.arange(n)
    for k in range(cfg.k_ref):
        if active.size == 0:
            break
        qc, _ = _value_and_grad(cost_critic, s[active], a[active], z[active], tau_c, False)
        counter.forward += active.size
        if k == 0:
            qc0[active] = qc
        done = qc <= d
        if k == 0:
            early[active[done]] = True
        active = active[~done]
        if active.size == 0:
            break
        sa, za, aa, a0a = s[active], z[active], a[active], a0[active]
        _, g_r = _value_and_grad(reward_critic, sa, aa, za, tau_r, True)
        counter.forward += active.size
        counter.backward += active.size
        a_t = np.clip(aa + cfg.alpha_r * (g_r - 2.0 * cfg.beta_n * (aa - a0a)), lo, hi)
        _, g_c = _value_and_grad(cost_critic, sa, a_t, za, tau_c, True)
        counter.forward += active.size
        counter.backward += active.size
        a_new = np.clip(a_t - cfg.alpha_c * g_c, lo, hi)
        bad = ~(np.all(np.isfinite(g_r), axis=1) & np.all(np.isfinite(g_c), axis=1))
        if np.any(bad):
            log.warning("non-finite critic gradient in refinement; falling back to the nominal action")
            fell[active[bad]] = True
            a_new[bad] = a0a[bad]
        a[active] = a_new
        iters[active] += 1
        if trace is not None:
            trace.append(a.copy())
        active = active[~bad]
    if cfg.k_ref == 0:
        # nothing was checked; record the nominal cost value for logging only (not counted)
        qc0, _ = _value_and_grad(cost_critic, s, a0, z, tau_c, False)
    w = float(np.clip(eta, 0.0, 1.0))
    a[fell] = a0[fell]
    out = a0 + w * (a - a0)
    return RefineResult(np.clip(out, lo, hi), a0, qc0, iters, early, fell)


def upper_tail_value(cost_critic: CriticFn, s, a, z, eta: float, cfg: RefineConfig) -> np.ndarray:
    _, u_c = shared_u(cfg)
    q, _ = _value_and_grad(cost_critic, np.atleast_2d(s), np.atleast_2d(a), np.atleast_2d(z),
                           TauBatch.upper_tail(eta, u_c), False)
    return q


# -- online state ------------------------------------------------------------

@dataclass
class DeployState:
    encoder: object
    schedule: RiskSchedule
    d: float
    contexts: list = field(default_factory=list)
    mu_rows: list = field(default_factory=list)
    var_rows: list = field(default_factory=list)
    posterior: GaussianPosterior | None = None
    eta: float = 0.0

    def __post_init__(self):
        if self.posterior is None:
            self.posterior = GaussianPosterior.prior(self.encoder.d_z)
        self.eta = current_eta(self.schedule, self.n_real)

    @property
    def n_real(self) -> int:
        return len(self.contexts)


def observe(state: DeployState, t: Transition) -> DeployState:
    """Add one context transition, refresh the posterior and the risk level."""
    mu, var = state.encoder.factor_arrays(transition_features([t]))
    state.contexts.append(t)
    state.mu_rows.append(mu[0])
    state.var_rows.append(var[0])
    state.posterior = combine_arrays(np.stack(state.mu_rows), np.stack(state.var_rows))
    state.eta = current_eta(state.schedule, state.n_real)
    return state


def current_eta(schedule: RiskSchedule, n_real: int) -> float:
    """Scheduled eta at the largest grid N not above ``n_real``; the first entry below the grid."""
    grid = schedule.n_grid
    i = int(np.searchsorted(grid, n_real, side="right")) - 1
    return float(schedule.etas[max(i, 0)])


def act(state: DeployState, s, actor, reward_critic, cost_critic, cfg: RefineConfig, counter=None) -> RefineResult:
    z = latent_estimate(state.posterior)
    return refine_action(s, z, state.eta, actor, reward_critic, cost_critic, state.d, cfg, counter)


# -- deployment loop --------------------------------------------------------

LOG_COLUMNS = (
    "step", "episode", "N_real", "eta", "z_norm", "qc_nominal", "qc_refined", "early_stop",
    "forward_passes", "backward_passes", "c", "cum_cost_disc", "cum_cost_undisc", "r",
)


@dataclass
class DeployResult:
    rows: list
    episode_costs: list
    episode_rewards: list
    etas: list


def run_deployment(
    env,
    encoder,
    actor,
    reward_critic,
    cost_critic,
    schedule: RiskSchedule,
    d: float,
    cfg: RefineConfig,
    episodes: int = 1,
    gamma: float = 0.99,
    max_steps: int | None = None,
    fixed_eta: float | None = None,
) -> DeployResult:
    """Deploy on one environment, updating the posterior after every step.

    ``fixed_eta`` replaces the schedule (``0`` is the no-adaptation ablation).
    """
    st = DeployState(encoder, schedule, d)
    rows = []
    ep_c, ep_r, etas = [], [], []
    step = 0
    cum_d = cum_u = 0.0
    budget = math.inf if max_steps is None else max_steps
    for ep in range(episodes):
        if step >= budget:
            break
        s = env.reset()
        jc = jr = jcu = 0.0
        disc = 1.0
        while step < budget:
            if fixed_eta is not None:
                st.eta = fixed_eta
            counter = PassCounter()
            res = act(st, s[None, :], actor, reward_critic, cost_critic, cfg, counter)
            a = res.action[0]
            z = latent_estimate(st.posterior)
            qc_ref = upper_tail_value(cost_critic, s[None, :], a[None, :], z[None, :], st.eta, cfg)[0]
            t, done = env.step(a, z)
            jc += disc * t.c
            jr += t.r
            jcu += t.c
            cum_d += disc * t.c
            cum_u += t.c
            disc *= gamma
            rows.append({
                "step": step, "episode": ep, "N_real": st.n_real, "eta": st.eta,
                "z_norm": float(np.linalg.norm(z)), "qc_nominal": float(res.qc_nominal[0]),
                "qc_refined": float(qc_ref), "early_stop": int(res.early_stop[0]),
                "forward_passes": counter.forward, "backward_passes": counter.backward,
                "c": t.c, "cum_cost_disc": cum_d, "cum_cost_undisc": cum_u, "r": t.r,
            })
            etas.append(st.eta)
            observe(st, t)
            step += 1
            s = t.s_next
            if done:
                break
        ep_c.append(jcu)
        ep_r.append(jr)
    return DeployResult(rows, ep_c, ep_r, etas)


def write_deploy_log(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in LOG_COLUMNS])
