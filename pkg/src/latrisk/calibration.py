"""Offline calibration of latent error, cost Lipschitzness and refinement cost reduction,
and the deployment risk schedule derived from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .envs.diagnostic import DiagnosticEnv, batch_rollout, collect_contexts
from .encoder import transition_features

DEFAULT_N_GRID = (4, 8, 16, 32, 64, 128, 256, 512)
DEFAULT_ETA_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))


class CalibrationError(ValueError):
    pass


def nearest_rank_quantile(x, q: float) -> float:
    """Sample quantile with the nearest-rank rule: the ``ceil(q n)``-th smallest value."""
    v = np.sort(np.asarray(x, dtype=float).ravel())
    if v.size == 0:
        raise CalibrationError("quantile of an empty sample")
    if not 0.0 <= q <= 1.0:
        raise CalibrationError(f"quantile level must lie in [0, 1], got {q}")
    k = max(1, math.ceil(q * v.size))
    return float(v[k - 1])


@dataclass
class CalibrationConfig:
    n_grid: tuple = DEFAULT_N_GRID
    eta_grid: tuple = DEFAULT_ETA_GRID
    q_eps: float = 0.9
    q_l: float = 0.9
    q_delta: float = 0.1
    n_ref: int = 4096
    n_envs: int = 64
    subsamples: int = 4
    episodes: int = 8
    monotone: bool = True
    seed: int = 0

    def __post_init__(self):
        for k in ("q_eps", "q_l", "q_delta"):
            q = getattr(self, k)
            if not 0.0 < q < 1.0:
                raise ValueError(f"{k} must lie in (0, 1)")
        if list(self.n_grid) != sorted(set(self.n_grid)) or not self.n_grid:
            raise ValueError("n_grid must be non-empty and strictly increasing")
        if list(self.eta_grid) != sorted(set(self.eta_grid)) or not self.eta_grid:
            raise ValueError("eta_grid must be non-empty and strictly increasing")
        if not all(0.0 < e < 1.0 for e in self.eta_grid):
            raise ValueError("eta_grid must lie in (0, 1)")

    @classmethod
    def median_preset(cls, **kw) -> "CalibrationConfig":
        return cls(q_eps=0.5, q_l=0.5, q_delta=0.5, **kw)


# -- latents ---------------------------------------------------------------

def posterior_means(encoder, feats: np.ndarray) -> np.ndarray:
    """Posterior mean over the context axis -2 of ``feats`` (..., n, in_dim)."""
    mu, var = encoder.factor_arrays(feats)
    prec = 1.0 / var
    return np.sum(prec * mu, axis=-2) / np.sum(prec, axis=-2)


def reference_latents(pools: Sequence[np.ndarray], encoder) -> np.ndarray:
    """``z_ref`` per environment: the posterior mean over its whole context pool."""
    return np.stack([posterior_means(encoder, p) for p in pools])


@dataclass
class SubsampleLatents:
    """``z[N]`` has shape (E, R): R nested subsamples per environment."""

    n_grid: tuple
    z: dict
    err: dict


def subsample_latents(
    pools: Sequence[np.ndarray], encoder, z_ref: np.ndarray, n_grid: Sequence[int], reps: int, rng
) -> SubsampleLatents:
    """Latent estimates from the first N contexts of ``reps`` random permutations of each pool.

    Selected rows keep their pool order, so N equal to the pool size reproduces
    ``z_ref`` bit for bit.
    """
    n_avail = min(len(p) for p in pools)
    if max(n_grid) > n_avail:
        raise CalibrationError(f"N = {max(n_grid)} exceeds the {n_avail} contexts available per environment")
    perms = [[rng.permutation(len(p)) for _ in range(reps)] for p in pools]
    zs, errs = {}, {}
    for n in n_grid:
        zn = np.stack([
            np.stack([posterior_means(encoder, pools[e][np.sort(perms[e][r][:n])]) for r in range(reps)])
            for e in range(len(pools))
        ])
        zs[n] = zn
        errs[n] = np.linalg.norm(zn - z_ref[:, None, :], axis=-1)
    return SubsampleLatents(tuple(n_grid), zs, errs)


def calibrate_epsilon(sub: SubsampleLatents, q_eps: float) -> np.ndarray:
    return np.array([nearest_rank_quantile(sub.err[n], q_eps) for n in sub.n_grid])


# -- cost evaluation --------------------------------------------------------

PolicyFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class DiagnosticEvaluator:
    """Batched discounted-cost rollouts over diagnostic environments.

    Calls with the same ``seed`` share all environment noise (common random numbers).
    """

    def __init__(self, envs: Sequence[DiagnosticEnv], episodes: int = 8):
        self.envs = list(envs)
        self.episodes = episodes

    def __call__(self, policy: PolicyFn, z: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
        jc, _ = batch_rollout(self.envs, policy, z, np.random.default_rng(seed), self.episodes)
        return jc.mean(axis=1), jc.std(axis=1, ddof=1) / np.sqrt(self.episodes) if self.episodes > 1 else 0 * jc[:, 0]

    def context_pools(self, n: int, rng) -> list[np.ndarray]:
        return [transition_features(collect_contexts(e, n, rng)) for e in self.envs]


class SequentialEvaluator:
    """Episode-by-episode evaluation for any family exposing ``instance(spec, seed)``."""

    def __init__(self, family, specs, episodes: int = 2, gamma: float = 0.99, max_steps: int | None = None):
        self.family = family
        self.specs = list(specs)
        self.episodes = episodes
        self.gamma = gamma
        self.max_steps = max_steps

    def __call__(self, policy: PolicyFn, z: np.ndarray, seed: int):
        means, ses = [], []
        for i, spec in enumerate(self.specs):
            costs = []
            for ep in range(self.episodes):
                env = self.family.instance(spec, seed * 100003 + i * 101 + ep)
                s = env.reset()
                jc, disc = 0.0, 1.0
                for _ in range(self.max_steps or self.family.horizon):
                    a = np.asarray(policy(s[None, :], z[i][None, :]))[0]
                    t, done = env.step(a, z[i])
                    jc += disc * t.c
                    disc *= self.gamma
                    s = t.s_next
                    if done:
                        break
                costs.append(jc)
            means.append(np.mean(costs))
            ses.append(np.std(costs, ddof=1) / np.sqrt(len(costs)) if len(costs) > 1 else 0.0)
        return np.array(means), np.array(ses)

    def context_pools(self, n: int, rng) -> list[np.ndarray]:
        pools = []
        for i, spec in enumerate(self.specs):
            env = self.family.instance(spec, int(rng.integers(2**31)))
            rows = []
            s = env.reset()
            while len(rows) < n:
                a = rng.uniform(-1.0, 1.0, size=self.family.act_dim)
                t, done = env.step(a, None)
                rows.append(t)
                s = env.reset() if done else t.s_next
            pools.append(transition_features(rows))
        return pools


def calibrate_lipschitz(
    evaluator, policy: PolicyFn, z_ref: np.ndarray, sub: SubsampleLatents, q_l: float, seed: int = 0
) -> tuple[np.ndarray, dict]:
    """Per-N quantile of ``|J_c(z_ref) - J_c(z_N)| / ||z_ref - z_N||`` over env subsamples.

    Samples with zero latent error are excluded.
    """
    j_ref, _ = evaluator(policy, z_ref, seed)
    out, ratios = [], {}
    for n in sub.n_grid:
        rs = []
        for r in range(sub.z[n].shape[1]):
            zn = sub.z[n][:, r, :]
            e = sub.err[n][:, r]
            jn, _ = evaluator(policy, zn, seed)
            ok = e > 0
            rs.append(np.abs(j_ref[ok] - jn[ok]) / e[ok])
        rs = np.concatenate(rs)
        if rs.size == 0:
            raise CalibrationError(f"N = {n}: every latent error is zero, no Lipschitz samples")
        ratios[n] = rs
        out.append(nearest_rank_quantile(rs, q_l))
    return np.array(out), ratios


def calibrate_delta(
    evaluator,
    nominal: PolicyFn,
    refined: Callable[[float], PolicyFn],
    sub: SubsampleLatents,
    eta_grid: Sequence[float],
    q_delta: float,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Low quantile of ``J_c(pi_exp | z_N) - J_c(pi_eta | z_N)``; both terms use ``z_N``.

    ``refined(eta)`` returns the refined policy at risk level ``eta``.  Returns
    ``(delta, se)`` with shape (len(eta_grid), len(n_grid)); ``se`` is the mean
    Monte Carlo standard error of the per-environment differences.
    """
    delta = np.zeros((len(eta_grid), len(sub.n_grid)))
    se = np.zeros_like(delta)
    for j, n in enumerate(sub.n_grid):
        zn = sub.z[n][:, 0, :]
        j_exp, s_exp = evaluator(nominal, zn, seed)
        for i, eta in enumerate(eta_grid):
            j_eta, s_eta = evaluator(refined(eta), zn, seed)
            delta[i, j] = nearest_rank_quantile(j_exp - j_eta, q_delta)
            se[i, j] = float(np.mean(np.sqrt(np.asarray(s_exp) ** 2 + np.asarray(s_eta) ** 2)))
    return delta, se


# -- table and schedule ---------------------------------------------------------

@dataclass
class RiskSchedule:
    n_grid: tuple
    etas: tuple
    feasible: tuple
    eta_max: float
    n_min: int | None

    @property
    def infeasible(self) -> bool:
        return not all(self.feasible)

    @property
    def initial_eta(self) -> float:
        return float(self.etas[0])


@dataclass
class CalibrationTable:
    n_grid: tuple
    eps: np.ndarray
    lip: np.ndarray
    eta_grid: tuple
    delta: np.ndarray
    q_eps: float = 0.9
    q_l: float = 0.9
    q_delta: float = 0.1
    n_envs: int = 0
    seed: int = 0
    delta_se: np.ndarray | None = None
    schedule: RiskSchedule | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.n_grid = tuple(int(n) for n in self.n_grid)
        self.eta_grid = tuple(float(e) for e in self.eta_grid)
        self.eps = np.asarray(self.eps, dtype=float)
        self.lip = np.asarray(self.lip, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        if self.delta_se is None:
            self.delta_se = np.zeros_like(self.delta)
        if self.delta.shape != (len(self.eta_grid), len(self.n_grid)):
            raise CalibrationError(f"delta shape {self.delta.shape} does not match the grids")

    @property
    def required(self) -> np.ndarray:
        """Per-N right-hand side ``L_q(N) eps_q(N)``."""
        return self.lip * self.eps

    @property
    def lipschitz_max(self) -> float:
        return float(np.max(self.lip))


def build_schedule(table: CalibrationTable, monotone: bool = True, eta_max: float | None = None) -> RiskSchedule:
    """Smallest grid eta with ``delta(eta, N) >= L(N) eps(N)``, else ``eta_max`` (flagged).

    With ``monotone`` the cost reduction is replaced by its lower envelope
    ``min_{eta' >= eta} delta(eta', N)`` and the requirement by ``max_{N' >= N}``
    of itself; the chosen eta is then carried backward as a running maximum so the
    schedule never increases in N.  Every feasible entry still satisfies the raw
    inequality.  ``n_min`` is the first N from which every later N is feasible.
    """
    if not table.n_grid or not table.eta_grid:
        raise CalibrationError("empty calibration grids")
    eg = np.asarray(table.eta_grid)
    e_max = float(eg[-1]) if eta_max is None else float(eta_max)
    delta = table.delta
    req = table.required
    if monotone:
        delta = np.minimum.accumulate(delta[::-1], axis=0)[::-1]
        req = np.maximum.accumulate(req[::-1])[::-1]
    etas, feas = [], []
    for j in range(len(table.n_grid)):
        ok = np.nonzero(delta[:, j] >= req[j])[0]
        if ok.size:
            etas.append(float(eg[ok[0]]))
            feas.append(True)
        else:
            etas.append(e_max)
            feas.append(False)
    if monotone:
        etas = list(np.maximum.accumulate(np.asarray(etas)[::-1])[::-1])
        etas = [float(e) for e in etas]
    n_min = None
    for j in range(len(table.n_grid)):
        if all(feas[j:]):
            n_min = table.n_grid[j]
            break
    return RiskSchedule(table.n_grid, tuple(etas), tuple(feas), e_max, n_min)


def check_schedule(table: CalibrationTable, sched: RiskSchedule) -> list[int]:
    """N values at or above ``n_min`` where the stored inequality fails (empty when safe)."""
    bad = []
    if sched.n_min is None:
        return bad
    eg = list(table.eta_grid)
    for j, n in enumerate(table.n_grid):
        if n < sched.n_min:
            continue
        i = eg.index(sched.etas[j]) if sched.etas[j] in eg else None
        if i is None or not table.delta[i, j] >= table.lip[j] * table.eps[j]:
            bad.append(n)
    return bad


# -- table file ------------------------------------------------------------

def _f(x) -> str:
    return repr(float(x))


def write_table(table: CalibrationTable, path: str | Path) -> None:
    sched = table.schedule or build_schedule(table)
    lines = ["[meta]"]
    meta = {
        "q_eps": _f(table.q_eps),
        "q_l": _f(table.q_l),
        "q_delta": _f(table.q_delta),
        "n_envs": str(table.n_envs),
        "seed": str(table.seed),
        "eta_max": _f(sched.eta_max),
        "n_min": "none" if sched.n_min is None else str(sched.n_min),
        "lipschitz_max": _f(table.lipschitz_max),
    }
    for k, v in table.meta.items():
        meta.setdefault(k, str(v))
    lines += [f"{k} = {v}" for k, v in meta.items()]
    lines += ["", "[epsilon]", "N eps"]
    lines += [f"{n} {_f(e)}" for n, e in zip(table.n_grid, table.eps)]
    lines += ["", "[lipschitz]", "N L"]
    lines += [f"{n} {_f(l)}" for n, l in zip(table.n_grid, table.lip)]
    lines += ["", "[delta]", "eta N delta se"]
    for i, eta in enumerate(table.eta_grid):
        for j, n in enumerate(table.n_grid):
            lines.append(f"{_f(eta)} {n} {_f(table.delta[i, j])} {_f(table.delta_se[i, j])}")
    lines += ["", "[schedule]", "N eta feasible"]
    lines += [f"{n} {_f(e)} {int(ok)}" for n, e, ok in zip(sched.n_grid, sched.etas, sched.feasible)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path: str | Path) -> CalibrationTable:
    sections: dict[str, list[str]] = {}
    cur = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            cur = line[1:-1]
            sections[cur] = []
            continue
        if cur is None:
            raise CalibrationError(f"{path}: content before the first section")
        sections[cur].append(line)
    for s in ("meta", "epsilon", "lipschitz", "delta", "schedule"):
        if s not in sections:
            raise CalibrationError(f"{path}: missing section [{s}]")
    meta = dict(tuple(p.strip() for p in l.split("=", 1)) for l in sections["meta"])
    eps_rows = [l.split() for l in sections["epsilon"][1:]]
    lip_rows = [l.split() for l in sections["lipschitz"][1:]]
    n_grid = tuple(int(r[0]) for r in eps_rows)
    eps = [float(r[1]) for r in eps_rows]
    lip = [float(r[1]) for r in lip_rows]
    drows = [l.split() for l in sections["delta"][1:]]
    eta_grid = tuple(dict.fromkeys(float(r[0]) for r in drows))
    delta = np.zeros((len(eta_grid), len(n_grid)))
    se = np.zeros_like(delta)
    for r in drows:
        i = eta_grid.index(float(r[0]))
        j = n_grid.index(int(r[1]))
        delta[i, j] = float(r[2])
        se[i, j] = float(r[3])
    srows = [l.split() for l in sections["schedule"][1:]]
    n_min = None if meta["n_min"] == "none" else int(meta["n_min"])
    sched = RiskSchedule(
        tuple(int(r[0]) for r in srows),
        tuple(float(r[1]) for r in srows),
        tuple(bool(int(r[2])) for r in srows),
        float(meta["eta_max"]),
        n_min,
    )
    known = {"q_eps", "q_l", "q_delta", "n_envs", "seed", "eta_max", "n_min", "lipschitz_max"}
    return CalibrationTable(
        n_grid, eps, lip, eta_grid, delta,
        float(meta["q_eps"]), float(meta["q_l"]), float(meta["q_delta"]),
        int(meta["n_envs"]), int(meta["seed"]), se, sched,
        {k: v for k, v in meta.items() if k not in known},
    )


# -- full pipeline ----------------------------------------------------------------

def calibrate(
    evaluator,
    encoder,
    nominal: PolicyFn,
    refined: Callable[[float], PolicyFn],
    cfg: CalibrationConfig,
    pools: Sequence[np.ndarray] | None = None,
) -> CalibrationTable:
    """Reference latents, eps, L and delta curves, and the schedule, in one pass."""
    rng = np.random.default_rng(cfg.seed)
    if pools is None:
        pools = evaluator.context_pools(cfg.n_ref, rng)
    z_ref = reference_latents(pools, encoder)
    sub = subsample_latents(pools, encoder, z_ref, cfg.n_grid, cfg.subsamples, rng)
    eps = calibrate_epsilon(sub, cfg.q_eps)
    lip, _ = calibrate_lipschitz(evaluator, nominal, z_ref, sub, cfg.q_l, seed=cfg.seed + 1)
    delta, se = calibrate_delta(evaluator, nominal, refined, sub, cfg.eta_grid, cfg.q_delta, seed=cfg.seed + 2)
    table = CalibrationTable(
        cfg.n_grid, eps, lip, cfg.eta_grid, delta, cfg.q_eps, cfg.q_l, cfg.q_delta,
        len(pools), cfg.seed, se,
    )
    table.schedule = build_schedule(table, cfg.monotone)
    return table
