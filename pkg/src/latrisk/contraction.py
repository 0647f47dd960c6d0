"""Exact distributional Bellman operators on finite MDPs, 1-D Wasserstein distances and
the task-aliasing regret bench."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .envs.bandit import AliasingBandit

MERGE_TOL = 1e-12


@dataclass(frozen=True)
class AtomDistribution:
    """Finite distribution; atoms sorted by value, ties within ``MERGE_TOL`` merged."""

    values: np.ndarray
    probs: np.ndarray

    @classmethod
    def make(cls, values, probs) -> "AtomDistribution":
        v = np.asarray(values, dtype=float).ravel()
        p = np.asarray(probs, dtype=float).ravel()
        if v.shape != p.shape or v.size == 0:
            raise ValueError("values and probs must be non-empty and of equal length")
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        total = p.sum()
        if not abs(total - 1.0) < 1e-9:
            raise ValueError(f"probabilities sum to {total}, not 1")
        order = np.argsort(v, kind="stable")
        v, p = v[order], p[order] / total
        keep_v, keep_p = [v[0]], [p[0]]
        for x, q in zip(v[1:], p[1:]):
            if x - keep_v[-1] <= MERGE_TOL:
                keep_p[-1] += q
            else:
                keep_v.append(x)
                keep_p.append(q)
        return cls(np.array(keep_v), np.array(keep_p))

    @classmethod
    def point(cls, x: float) -> "AtomDistribution":
        return cls(np.array([float(x)]), np.array([1.0]))

    def mean(self) -> float:
        return float(self.values @ self.probs)

    def to_record(self) -> dict:
        return {"values": self.values.tolist(), "probs": self.probs.tolist()}


def wasserstein_p(d1: AtomDistribution, d2: AtomDistribution, p: int = 1) -> float:
    """Exact ``W_p`` via the quantile functions on the merged cumulative-probability grid."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    c1 = np.cumsum(d1.probs)
    c2 = np.cumsum(d2.probs)
    c1[-1] = c2[-1] = 1.0
    grid = np.union1d(c1, c2)
    lo = np.concatenate([[0.0], grid[:-1]])
    w = grid - lo
    mid = lo + 0.5 * w
    q1 = d1.values[np.minimum(np.searchsorted(c1, mid), len(c1) - 1)]
    q2 = d2.values[np.minimum(np.searchsorted(c2, mid), len(c2) - 1)]
    diff = np.abs(q1 - q2)
    if p == 1:
        return float(np.sum(w * diff))
    return float(np.sqrt(np.sum(w * diff**2)))


@dataclass
class TabularMdp:
    """``P[s, a, s']``; ``r`` and ``c`` are (S, A) or latent-indexed (Z, S, A)."""

    P: np.ndarray
    r: np.ndarray
    gamma: float
    c: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not np.allclose(self.P.sum(axis=-1), 1.0, atol=1e-12) or np.any(self.P < 0):
            raise ValueError("transition rows must be probability vectors")
        if self.r.ndim == 2:
            self.r = self.r[None]
        if self.c is None:
            self.c = np.zeros_like(self.r)
        else:
            self.c = np.asarray(self.c, dtype=float)
            if self.c.ndim == 2:
                self.c = self.c[None]

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def n_latents(self) -> int:
        return self.r.shape[0]


Table = list  # table[s][a] -> AtomDistribution


def apply_bellman(table: Table, mdp: TabularMdp, policy: np.ndarray, z: int = 0, head: str = "reward") -> Table:
    """``(T Z)(s, a) = law of  r(s, a) + gamma * Z(S', pi(S'))``,  ``S' ~ P(s, a)``.

    ``policy`` maps state to action, shape (S,) or (Z, S).
    """
    pol = np.asarray(policy)
    pol = pol[z] if pol.ndim == 2 else pol
    rew = (mdp.r if head == "reward" else mdp.c)[z]
    g = mdp.gamma
    out = []
    for s in range(mdp.n_states):
        row = []
        for a in range(mdp.n_actions):
            if g == 0.0:
                row.append(AtomDistribution.point(rew[s, a]))
                continue
            vs, ps = [], []
            for s2 in np.nonzero(mdp.P[s, a])[0]:
                nxt = table[s2][int(pol[s2])]
                vs.append(rew[s, a] + g * nxt.values)
                ps.append(mdp.P[s, a, s2] * nxt.probs)
            row.append(AtomDistribution.make(np.concatenate(vs), np.concatenate(ps)))
        out.append(row)
    return out


def sup_distance(t1: Table, t2: Table, p: int = 1) -> float:
    return max(wasserstein_p(x, y, p) for r1, r2 in zip(t1, t2) for x, y in zip(r1, r2))


def random_table(n_states: int, n_actions: int, rng, atoms: int = 3, scale: float = 5.0) -> Table:
    return [
        [AtomDistribution.make(rng.normal(0.0, scale, atoms), rng.dirichlet(np.ones(atoms))) for _ in range(n_actions)]
        for _ in range(n_states)
    ]


def random_mdp(rng, n_states: int = 5, n_actions: int = 2, gamma: float = 0.9, kind: str = "stochastic",
               n_latents: int = 1) -> TabularMdp:
    """``stochastic``: Dirichlet rows and Gaussian rewards; ``deterministic``: one-hot rows;
    ``constant``: stochastic rows with a single reward value."""
    S, A = n_states, n_actions
    if kind == "deterministic":
        P = np.zeros((S, A, S))
        nxt = rng.integers(0, S, size=(S, A))
        P[np.arange(S)[:, None], np.arange(A)[None, :], nxt] = 1.0
    else:
        P = rng.dirichlet(np.ones(S), size=(S, A))
    if kind == "constant":
        r = np.full((n_latents, S, A), float(rng.normal()))
    else:
        r = rng.normal(0.0, 1.0, size=(n_latents, S, A))
    return TabularMdp(P, r, gamma)


def policy_values(mdp: TabularMdp, policy: np.ndarray, z: int = 0) -> np.ndarray:
    """Exact ``Q^pi(s, a)`` by a linear solve."""
    pol = np.asarray(policy)
    pol = pol[z] if pol.ndim == 2 else pol
    S, A = mdp.n_states, mdp.n_actions
    P_pi = mdp.P[:, :, :][np.arange(S)[:, None], np.arange(A)[None, :]]  # (S, A, S')
    # Q = r + gamma * P Q(., pi(.))  ->  solve on the state-action vector
    M = np.zeros((S * A, S * A))
    for s in range(S):
        for a in range(A):
            for s2 in range(S):
                M[s * A + a, s2 * A + int(pol[s2])] += P_pi[s, a, s2]
    q = np.linalg.solve(np.eye(S * A) - mdp.gamma * M, mdp.r[z].ravel())
    return q.reshape(S, A)


def point_table(q: np.ndarray) -> Table:
    return [[AtomDistribution.point(v) for v in row] for row in q]


@dataclass
class ContractionReport:
    gamma: float
    ratios: list = field(default_factory=list)
    decay: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def max_ratio(self) -> float:
        return max(self.ratios) if self.ratios else 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    def text(self) -> str:
        lines = [
            "contraction report",
            f"gamma = {self.gamma!r}",
            f"trials = {len(self.ratios)}",
            f"max_ratio = {self.max_ratio!r}",
            f"decay_checks = {len(self.decay)}",
            f"violations = {len(self.violations)}",
            "",
            "[ratios]",
        ]
        lines += [repr(r) for r in self.ratios]
        lines += ["", "[decay]", "trial k distance envelope"]
        lines += [f"{t} {k} {d!r} {e!r}" for t, k, d, e in self.decay]
        if self.violations:
            lines += ["", "[violations]"] + [json.dumps(v) for v in self.violations]
        return "\n".join(lines) + "\n"


def _instance(mdp: TabularMdp, pol, tables) -> dict:
    return {
        "P": mdp.P.tolist(), "r": mdp.r.tolist(), "gamma": mdp.gamma, "policy": np.asarray(pol).tolist(),
        "tables": [[[d.to_record() for d in row] for row in t] for t in tables],
    }


def verify_contraction(
    trials: int = 100,
    iterations: int = 30,
    gamma: float = 0.9,
    seed: int = 0,
    max_states: int = 6,
    max_actions: int = 3,
    applications: int = 3,
    p: int = 1,
) -> ContractionReport:
    """Random-instance certificates for the contraction and the geometric approach to the fixed point.

    Ratio checks use stochastic random MDPs for ``applications`` exact
    steps per trial.  Decay checks alternate between MDP classes whose exact
    iterates keep finite support: deterministic transitions (fixed point at the
    point masses ``Q^pi``) and stochastic transitions with a constant reward.
    """
    rng = np.random.default_rng(seed)
    rep = ContractionReport(gamma)
    for t in range(trials):
        S = int(rng.integers(2, max_states + 1))
        A = int(rng.integers(1, max_actions + 1))
        mdp = random_mdp(rng, S, A, gamma, "stochastic")
        pol = rng.integers(0, A, size=S)
        z1 = random_table(S, A, rng, atoms=2)
        z2 = random_table(S, A, rng, atoms=2)
        for _ in range(applications):
            d0 = sup_distance(z1, z2, p)
            n1, n2 = apply_bellman(z1, mdp, pol), apply_bellman(z2, mdp, pol)
            d1 = sup_distance(n1, n2, p)
            ratio = d1 / d0 if d0 > 0 else 0.0
            rep.ratios.append(ratio)
            if d1 > gamma * d0 + 1e-9:
                rep.violations.append({"check": "ratio", "trial": t, "ratio": ratio, "instance": _instance(mdp, pol, [z1, z2])})
            z1, z2 = n1, n2

        kind = "deterministic" if t % 2 == 0 else "constant"
        mdp = random_mdp(rng, S, A, gamma, kind)
        pol = rng.integers(0, A, size=S)
        fixed = point_table(policy_values(mdp, pol))
        cur = random_table(S, A, rng, atoms=3)
        d_init = sup_distance(cur, fixed, p)
        start = cur
        for k in range(1, iterations + 1):
            cur = apply_bellman(cur, mdp, pol)
            dk = sup_distance(cur, fixed, p)
            env = gamma**k * d_init * (1 + 1e-6)
            rep.decay.append((t, k, dk, env))
            if dk > env + 1e-12:
                rep.violations.append({"check": "decay", "trial": t, "k": k, "distance": dk, "envelope": env,
                                       "kind": kind, "instance": _instance(mdp, pol, [start])})
                break
    return rep


def iterate_to_fixed_point(mdp: TabularMdp, policy, init: Table, iters: int, z: int = 0) -> Table:
    t = init
    for _ in range(iters):
        t = apply_bellman(t, mdp, policy, z)
    return t


# -- aliasing -------------------------------------------------------------------

def aliasing_regret(bandit: AliasingBandit, step: float = 1e-3) -> tuple[float, float]:
    """Brute-force ``min_p max_task regret`` over a grid of mixed non-contextual policies."""
    if step <= 0:
        raise ValueError("grid step must be positive")
    ps = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    rows = bandit.q
    best = rows.max(axis=1, keepdims=True)
    regret = best - (ps[None, :] * rows[:, :1] + (1 - ps[None, :]) * rows[:, 1:2])
    worst = regret.max(axis=0)
    i = int(np.argmin(worst))
    return float(worst[i]), float(ps[i])


def contextual_regret(bandit: AliasingBandit) -> list[float]:
    """Regret of the per-task greedy (latent-aware) policy in each task."""
    out = []
    for k, row in enumerate(bandit.q):
        p = 1.0 if row[0] >= row[1] else 0.0
        out.append(bandit.regret(k, p))
    return out
