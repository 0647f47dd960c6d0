"""Domain-randomised training with alternating frozen critic/encoder updates."""

from __future__ import annotations

import csv
import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .actor import Actor, ActorConfig, LagrangeState, actor_loss, pid_update
from .configtools import from_mapping, to_mapping
from .critic import CriticConfig, QuantileCritic, huber_quantile_loss, target_sync, td_error_matrix, td_targets
from .encoder import (
    Encoder,
    EncoderConfig,
    GaussianPosterior,
    encoder_loss,
    kl_tensor,
    reparameterize,
    transition_features,
)
from .envs.base import Transition
from .envs.domain import EnvParams
from .envs.scenario import ScenarioConfig, build_family
from .numerics import T, OptimState, SeededRng, adam_step, grad, load_checkpoint, save_checkpoint
from .numerics.nn import global_norm_sq


class FreezeViolation(AssertionError):
    """A parameter block changed during a phase in which it was frozen."""


class TrainingDivergence(FloatingPointError):
    """A loss became non-finite."""


@dataclass
class AgentConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    actor: ActorConfig = field(default_factory=ActorConfig)


@dataclass
class TrainConfig:
    gamma: float = 0.99
    critic_lr: float = 3e-4
    encoder_lr: float = 3e-4
    actor_lr: float = 3e-4
    n_envs: int = 32
    episodes: int = 0
    updates_per_episode: int = 1
    warmup_episodes: int = 1
    batch_envs: int = 8
    batch_per_env: int = 16
    context_size: int = 128
    buffer_capacity: int = 20000
    context_capacity: int = 512
    explore_std: float = 0.2
    cost_threshold: float = 20.0
    cost_smoothing: float = 0.2
    pid_cost: str = "discounted"
    kp: float = 0.1
    ki: float = 0.003
    kd: float = 0.001
    lambda_init: float = 0.0
    grad_smoothing: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if min(self.critic_lr, self.encoder_lr, self.actor_lr) <= 0:
            raise ValueError("step sizes must be positive")
        if self.pid_cost not in ("discounted", "undiscounted"):
            raise ValueError("pid_cost must be 'discounted' or 'undiscounted'")
        if self.n_envs < 1 or self.context_size < 1 or self.batch_envs < 1 or self.batch_per_env < 1:
            raise ValueError("env and batch counts must be >= 1")


class Agent:
    """Encoder, reward/cost critics (with targets) and actor for one run."""

    def __init__(self, obs_dim: int, act_dim: int, cfg: AgentConfig, seed: int = 0):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        root = SeededRng(seed, (1,))
        d_z = cfg.encoder.d_z
        self.encoder = Encoder(obs_dim, act_dim, cfg.encoder, root.child(0).generator())
        in_dim = obs_dim + act_dim + d_z
        self.reward_critic = QuantileCritic(in_dim, cfg.critic, root.child(1).generator())
        self.cost_critic = QuantileCritic(in_dim, cfg.critic, root.child(2).generator())
        self.actor = Actor(obs_dim, d_z, act_dim, cfg.actor, root.child(3).generator())

    @property
    def d_z(self) -> int:
        return self.encoder.d_z

    def stores(self) -> "OrderedDict":
        return OrderedDict(
            encoder=self.encoder.params,
            critic_r=self.reward_critic.params,
            critic_r_target=self.reward_critic.target,
            critic_c=self.cost_critic.params,
            critic_c_target=self.cost_critic.target,
            actor=self.actor.params,
        )

    def checksums(self) -> dict:
        return {k: v.checksum() for k, v in self.stores().items()}

    def policy(self, s, z) -> np.ndarray:
        return self.actor.forward(self.actor.params.constants(), s, z).data


class EnvBuffer:
    """Fixed-capacity ring of transitions from a single environment."""

    FIELDS = ("s", "a", "s_next", "r", "c", "terminal")

    def __init__(self, obs_dim: int, act_dim: int, capacity: int):
        self.capacity = capacity
        self.data = {
            "s": np.zeros((capacity, obs_dim)),
            "a": np.zeros((capacity, act_dim)),
            "s_next": np.zeros((capacity, obs_dim)),
            "r": np.zeros(capacity),
            "c": np.zeros(capacity),
            "terminal": np.zeros(capacity),
        }
        self.size = 0
        self.cursor = 0

    def add(self, t: Transition) -> None:
        i = self.cursor
        self.data["s"][i] = np.ravel(t.s)
        self.data["a"][i] = np.ravel(t.a)
        self.data["s_next"][i] = np.ravel(t.s_next)
        self.data["r"][i] = t.r
        self.data["c"][i] = t.c
        self.data["terminal"][i] = float(t.terminal)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def take(self, idx: np.ndarray) -> dict:
        return {k: v[idx] for k, v in self.data.items()}

    def sample(self, n: int, rng: np.random.Generator) -> dict:
        return self.take(rng.integers(0, self.size, size=n))

    def recent(self, n: int) -> dict:
        n = min(n, self.size)
        idx = (self.cursor - n + np.arange(n)) % self.capacity
        return self.take(idx)


class MultiEnvBuffer:
    """One :class:`EnvBuffer` per environment id; samples never mix environments."""

    def __init__(self, n_envs: int, obs_dim: int, act_dim: int, capacity: int):
        self.buffers = [EnvBuffer(obs_dim, act_dim, capacity) for _ in range(n_envs)]

    def __getitem__(self, i: int) -> EnvBuffer:
        return self.buffers[i]

    def ready(self) -> list[int]:
        return [i for i, b in enumerate(self.buffers) if b.size > 0]

    def total(self) -> int:
        return sum(b.size for b in self.buffers)


@dataclass
class EpisodeTrace:
    transitions: list
    z: np.ndarray
    reward: float
    cost_discounted: float
    cost_undiscounted: float


def collect_episode(
    env,
    agent: Agent,
    rng: np.random.Generator,
    mode: str = "prior",
    contexts: Sequence[Transition] | dict | None = None,
    explore_std: float = 0.0,
    gamma: float = 0.99,
    max_steps: int | None = None,
) -> EpisodeTrace:
    """Run one episode with a latent fixed for its duration.

    ``mode`` is ``prior`` (z ~ N(0, I)), ``posterior`` (a sample from the
    posterior over ``contexts``) or ``mean`` (the posterior mean).
    """
    if mode == "prior":
        post = GaussianPosterior.prior(agent.d_z)
    else:
        post = _posterior_from(agent.encoder, contexts)
    z = post.mean.copy() if mode == "mean" else post.sample(rng)
    s = env.reset()
    out = []
    jr = jc = jcu = 0.0
    disc = 1.0
    limit = max_steps or getattr(env, "horizon", None) or env.cfg.horizon
    for _ in range(limit):
        a = agent.policy(s[None, :], z[None, :])[0]
        if explore_std > 0:
            a = np.clip(a + explore_std * rng.standard_normal(a.shape), -1.0, 1.0)
        t, done = env.step(a, z)
        out.append(t)
        jr += disc * t.r
        jc += disc * t.c
        jcu += t.c
        disc *= gamma
        s = t.s_next
        if done:
            break
    return EpisodeTrace(out, z, jr, jc, jcu)


def _posterior_from(encoder, contexts) -> GaussianPosterior:
    from .encoder import combine_arrays

    if contexts is None or len(contexts) == 0 or (isinstance(contexts, dict) and len(contexts["r"]) == 0):
        return GaussianPosterior.prior(encoder.d_z)
    x = transition_features(contexts)
    return combine_arrays(*encoder.factor_arrays(x))


METRIC_COLUMNS = (
    "step",
    "episode",
    "loss_r",
    "loss_c",
    "loss_kl",
    "lyapunov_j",
    "actor_loss",
    "lambda",
    "e",
    "integral",
    "ep_reward",
    "ep_cost_disc",
    "ep_cost_undisc",
    "j_hat",
    "grad_norm_sq",
    "grad_norm_smoothed",
)


class TrainState:
    """Everything needed to continue a run bit-for-bit."""

    def __init__(self, cfg: TrainConfig, agent_cfg: AgentConfig, scenario: ScenarioConfig):
        self.cfg = cfg
        self.agent_cfg = agent_cfg
        self.scenario = scenario
        self.family = build_family(scenario)
        fam = self.family
        self.agent = Agent(fam.obs_dim, fam.act_dim, agent_cfg, cfg.seed)
        root = SeededRng(cfg.seed)
        env_rng = root.child(2).generator()
        self.env_specs = [fam.sample(env_rng) for _ in range(cfg.n_envs)]
        self.rng_collect = root.child(3).generator()
        self.rng_update = root.child(4).generator()
        a = self.agent
        self.opt = OrderedDict(
            critic_r=OptimState.for_store(a.reward_critic.params, cfg.critic_lr),
            critic_c=OptimState.for_store(a.cost_critic.params, cfg.critic_lr),
            encoder=OptimState.for_store(a.encoder.params, cfg.encoder_lr),
            actor=OptimState.for_store(a.actor.params, cfg.actor_lr),
        )
        self.replay = MultiEnvBuffer(cfg.n_envs, fam.obs_dim, fam.act_dim, cfg.buffer_capacity)
        self.context = MultiEnvBuffer(cfg.n_envs, fam.obs_dim, fam.act_dim, cfg.context_capacity)
        self.env_episodes = [0] * cfg.n_envs
        self.lagrange = LagrangeState(lam=cfg.lambda_init, kp=cfg.kp, ki=cfg.ki, kd=cfg.kd)
        self.j_hat: float | None = None
        self.step = 0
        self.episode = 0
        self.grad_smoothed: float | None = None
        self.last_episode = (float("nan"), float("nan"), float("nan"))
        self.metrics: list[dict] = []

    @property
    def gamma(self) -> float:
        return self.cfg.gamma

    def env_seed(self, env_id: int) -> int:
        ss = np.random.SeedSequence(self.cfg.seed, spawn_key=(5, env_id, self.env_episodes[env_id]))
        return int(ss.generate_state(1, np.uint32)[0])


def config_hash(state: TrainState) -> str:
    blob = json.dumps(
        {"train": to_mapping(state.cfg), "agent": to_mapping(state.agent_cfg), "scenario": to_mapping(state.scenario)},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()


# -- one update -----------------------------------------------------------

@dataclass
class UpdateBatch:
    """PEARL-style batch: ``E`` environments, ``b`` transitions and ``M`` contexts each."""

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: np.ndarray
    c: np.ndarray
    terminal: np.ndarray
    ctx: np.ndarray
    eps: np.ndarray
    taus_i: np.ndarray
    taus_j: np.ndarray
    per_env: int

    @property
    def rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.ctx.shape[0]), self.per_env)


def sample_batch(state: TrainState, rng: np.random.Generator) -> UpdateBatch:
    cfg = state.cfg
    ready = state.replay.ready()
    if not ready:
        raise RuntimeError("train_step needs non-empty buffers")
    ids = rng.choice(ready, size=cfg.batch_envs, replace=cfg.batch_envs > len(ready))
    parts = [state.replay[i].sample(cfg.batch_per_env, rng) for i in ids]
    ctx = np.stack([transition_features(state.context[i].sample(cfg.context_size, rng)) for i in ids])
    cat = {k: np.concatenate([p[k] for p in parts]) for k in EnvBuffer.FIELDS}
    ccfg = state.agent_cfg.critic
    return UpdateBatch(
        cat["s"], cat["a"], cat["s_next"], cat["r"], cat["c"], cat["terminal"], ctx,
        rng.standard_normal((len(ids), state.agent.d_z)),
        rng.uniform(0.0, 1.0, size=ccfg.n_tau),
        rng.uniform(0.0, 1.0, size=ccfg.n_tau_target),
        cfg.batch_per_env,
    )


def _quantile_loss(critic: QuantileCritic, params, batch: UpdateBatch, z, target: np.ndarray) -> "T.Tensor":
    ms = critic.members(params, batch.s, batch.a, z, batch.taus_i)
    kappa = critic.cfg.kappa
    total = None
    for m in ms:
        l = huber_quantile_loss(td_error_matrix(m, target), batch.taus_i, kappa)
        total = l if total is None else total + l
    return total * (1.0 / len(ms))


def _targets(agent: Agent, batch: UpdateBatch, z: np.ndarray, gamma: float):
    a_next = agent.policy(batch.s_next, z)
    yr = td_targets(agent.reward_critic.target_call, batch.s_next, a_next, z, batch.r, batch.terminal, gamma, batch.taus_j)
    yc = td_targets(agent.cost_critic.target_call, batch.s_next, a_next, z, batch.c, batch.terminal, gamma, batch.taus_j)
    return yr, yc


def _check_finite(name: str, value: float, step: int) -> None:
    if not np.isfinite(value):
        raise TrainingDivergence(f"non-finite {name} at step {step}: {value}")


def _frozen(agent: Agent, names, before: dict, phase: str) -> None:
    for n in names:
        now = agent.stores()[n].checksum()
        if now != before[n]:
            raise FreezeViolation(f"{n} changed during the {phase} phase")


def train_step(state: TrainState, batch: UpdateBatch | None = None) -> dict:
    """Critic step (encoder frozen), encoder step (critics frozen), actor step, target sync."""
    agent = state.agent
    cfg = state.cfg
    ecfg = agent.cfg.encoder
    rng = state.rng_update
    batch = batch or sample_batch(state, rng)
    rows = batch.rows

    m0, v0 = agent.encoder.posterior_tensors(agent.encoder.params.constants(), batch.ctx)
    z_env = m0.data + np.sqrt(v0.data) * batch.eps
    z = z_env[rows]
    yr, yc = _targets(agent, batch, z, cfg.gamma)

    # critic phase: encoder, actor and targets frozen
    before = agent.checksums()
    g_crit = []
    losses = {}
    for key, critic, y in (("r", agent.reward_critic, yr), ("c", agent.cost_critic, yc)):
        leaves = critic.params.leaves()
        loss = _quantile_loss(critic, leaves, batch, z, y)
        _check_finite(f"critic loss {key}", loss.item(), state.step)
        gs = grad(loss, list(leaves.values()))
        g_crit.extend(gs)
        adam_step(critic.params, dict(zip(leaves.keys(), gs)), state.opt[f"critic_{key}"])
        losses[key] = loss.item()
    _frozen(agent, ("encoder", "actor", "critic_r_target", "critic_c_target"), before, "critic")

    # encoder phase: both critics (and their targets) frozen at the new values
    before = agent.checksums()
    leaves = agent.encoder.params.leaves()
    m, v = agent.encoder.posterior_tensors(leaves, batch.ctx)
    zt = T.getitem(reparameterize(m, v, batch.eps), rows)
    lr_ = _quantile_loss(agent.reward_critic, agent.reward_critic.params.constants(), batch, zt, yr)
    lc_ = _quantile_loss(agent.cost_critic, agent.cost_critic.params.constants(), batch, zt, yc)
    kl = kl_tensor(m, v)
    enc = encoder_loss(lr_, lc_, kl, ecfg)
    _check_finite("encoder loss", enc.item(), state.step)
    g_enc = grad(enc, list(leaves.values()))
    adam_step(agent.encoder.params, dict(zip(leaves.keys(), g_enc)), state.opt["encoder"])
    _frozen(agent, ("critic_r", "critic_c", "critic_r_target", "critic_c_target", "actor"), before, "encoder")

    # actor phase with the latent detached
    before = agent.checksums()
    leaves = agent.actor.params.leaves()
    la = actor_loss(
        agent.actor, leaves, agent.reward_critic, agent.cost_critic, batch.s, z,
        state.lagrange.lam, agent.cfg.actor.k_samples, rng,
    )
    _check_finite("actor loss", la.item(), state.step)
    g_act = grad(la, list(leaves.values()))
    adam_step(agent.actor.params, dict(zip(leaves.keys(), g_act)), state.opt["actor"])
    _frozen(agent, ("encoder", "critic_r", "critic_c", "critic_r_target", "critic_c_target"), before, "actor")

    target_sync(agent.reward_critic)
    target_sync(agent.cost_critic)

    gn = global_norm_sq(g_crit) + global_norm_sq(g_enc)
    a_ = cfg.grad_smoothing
    state.grad_smoothed = gn if state.grad_smoothed is None else (1 - a_) * state.grad_smoothed + a_ * gn
    state.step += 1
    lag = state.lagrange
    row = {
        "step": state.step,
        "episode": state.episode,
        "loss_r": lr_.item(),
        "loss_c": lc_.item(),
        "loss_kl": kl.item(),
        "lyapunov_j": enc.item(),
        "actor_loss": la.item(),
        "lambda": lag.lam,
        "e": lag.e,
        "integral": lag.integral,
        "ep_reward": state.last_episode[0],
        "ep_cost_disc": state.last_episode[1],
        "ep_cost_undisc": state.last_episode[2],
        "j_hat": state.j_hat if state.j_hat is not None else float("nan"),
        "grad_norm_sq": gn,
        "grad_norm_smoothed": state.grad_smoothed,
    }
    state.metrics.append(row)
    return row


def lyapunov_value(agent: Agent, batch: UpdateBatch, gamma: float) -> tuple[float, dict]:
    """``beta_r L_r + beta_c L_c + beta_kl KL`` on a fixed evaluation batch."""
    ecfg = agent.cfg.encoder
    m, v = agent.encoder.posterior_tensors(agent.encoder.params.constants(), batch.ctx)
    z = (m.data + np.sqrt(v.data) * batch.eps)[batch.rows]
    yr, yc = _targets(agent, batch, z, gamma)
    lr_ = _quantile_loss(agent.reward_critic, agent.reward_critic.params.constants(), batch, z, yr).item()
    lc_ = _quantile_loss(agent.cost_critic, agent.cost_critic.params.constants(), batch, z, yc).item()
    kl = kl_tensor(m, v).item()
    parts = {"loss_r": lr_, "loss_c": lc_, "loss_kl": kl}
    return float(encoder_loss(lr_, lc_, kl, ecfg)), parts


# -- episodes and the outer loop -------------------------------------------

def run_episode(state: TrainState) -> EpisodeTrace:
    cfg = state.cfg
    env_id = state.episode % cfg.n_envs
    env = state.family.instance(state.env_specs[env_id], state.env_seed(env_id))
    first = state.env_episodes[env_id] == 0
    ctx = None if first else state.context[env_id].recent(cfg.context_size)
    trace = collect_episode(
        env, state.agent, state.rng_collect, "prior" if first else "posterior", ctx,
        cfg.explore_std, cfg.gamma,
    )
    for t in trace.transitions:
        state.replay[env_id].add(t)
        state.context[env_id].add(t)
    state.env_episodes[env_id] += 1
    jc = trace.cost_discounted if cfg.pid_cost == "discounted" else trace.cost_undiscounted
    a_ = cfg.cost_smoothing
    state.j_hat = jc if state.j_hat is None else (1 - a_) * state.j_hat + a_ * jc
    if state.episode >= cfg.warmup_episodes:
        # warmup episodes come from the untrained policy; they seed j_hat but do not move lambda
        state.lagrange = pid_update(state.lagrange, state.j_hat, cfg.cost_threshold)
    state.last_episode = (trace.reward, trace.cost_discounted, trace.cost_undiscounted)
    state.episode += 1
    return trace


def run(state: TrainState, episodes: int, progress=None) -> TrainState:
    for _ in range(episodes):
        run_episode(state)
        if state.episode > state.cfg.warmup_episodes:
            for _ in range(state.cfg.updates_per_episode):
                train_step(state)
        if progress is not None:
            progress(state)
    return state


def train(
    cfg: TrainConfig,
    agent_cfg: AgentConfig | None = None,
    scenario: ScenarioConfig | None = None,
    out_dir: str | Path | None = None,
    progress=None,
) -> TrainState:
    state = TrainState(cfg, agent_cfg or AgentConfig(), scenario or ScenarioConfig())
    run(state, cfg.episodes, progress)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_state(state, out / "checkpoint.bin")
        write_metrics(state.metrics, out / "metrics.csv")
    return state


def write_metrics(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in METRIC_COLUMNS])


# -- checkpoints --------------------------------------------------------------

def _spec_record(spec):
    if isinstance(spec, EnvParams):
        return {"type": "platoon", **spec.as_dict()}
    return {"type": "diagnostic", "hazard": spec.hazard}


def save_state(state: TrainState, path: str | Path) -> None:
    arrays = OrderedDict()
    for name, store in state.agent.stores().items():
        for k, v in store.items():
            arrays[f"params/{name}/{k}"] = v
    for name, opt in state.opt.items():
        for k in opt.m:
            arrays[f"optim/{name}/m/{k}"] = opt.m[k]
            arrays[f"optim/{name}/v/{k}"] = opt.v[k]
    cursors = {}
    for kind, mb in (("replay", state.replay), ("context", state.context)):
        for i, b in enumerate(mb.buffers):
            cursors[f"{kind}/{i}"] = [b.size, b.cursor]
            for f in EnvBuffer.FIELDS:
                arrays[f"buffer/{kind}/{i}/{f}"] = b.data[f][: b.size]
    lag = state.lagrange
    meta = {
        "kind": "train_state",
        "config_hash": config_hash(state),
        "train": to_mapping(state.cfg),
        "agent": to_mapping(state.agent_cfg),
        "scenario": to_mapping(state.scenario),
        "obs_dim": state.family.obs_dim,
        "act_dim": state.family.act_dim,
        "env_specs": [_spec_record(s) for s in state.env_specs],
        "lagrange": to_mapping(lag),
        "j_hat": state.j_hat,
        "step": state.step,
        "episode": state.episode,
        "env_episodes": state.env_episodes,
        "grad_smoothed": state.grad_smoothed,
        "last_episode": list(state.last_episode),
        "optim_steps": {k: o.step for k, o in state.opt.items()},
        "rng": {
            "collect": state.rng_collect.bit_generator.state,
            "update": state.rng_update.bit_generator.state,
        },
        "buffers": cursors,
    }
    save_checkpoint(path, arrays, state.cfg.seed, meta)


def load_state(path: str | Path) -> TrainState:
    arrays, header = load_checkpoint(path)
    meta = header["meta"]
    cfg = from_mapping(TrainConfig, meta["train"], "train")
    agent_cfg = from_mapping(AgentConfig, meta["agent"], "agent")
    scenario = from_mapping(ScenarioConfig, meta["scenario"], "scenario")
    state = TrainState(cfg, agent_cfg, scenario)
    for name, store in state.agent.stores().items():
        for k in store.names():
            store.set(k, arrays[f"params/{name}/{k}"])
    for name, opt in state.opt.items():
        opt.step = meta["optim_steps"][name]
        for k in opt.m:
            opt.m[k] = arrays[f"optim/{name}/m/{k}"].copy()
            opt.v[k] = arrays[f"optim/{name}/v/{k}"].copy()
    for kind, mb in (("replay", state.replay), ("context", state.context)):
        for i, b in enumerate(mb.buffers):
            size, cursor = meta["buffers"][f"{kind}/{i}"]
            for f in EnvBuffer.FIELDS:
                b.data[f][:size] = arrays[f"buffer/{kind}/{i}/{f}"]
            b.size, b.cursor = size, cursor
    lag = meta["lagrange"]
    state.lagrange = LagrangeState(**lag)
    state.j_hat = meta["j_hat"]
    state.step = meta["step"]
    state.episode = meta["episode"]
    state.env_episodes = list(meta["env_episodes"])
    state.grad_smoothed = meta["grad_smoothed"]
    state.last_episode = tuple(meta["last_episode"])
    state.rng_collect.bit_generator.state = meta["rng"]["collect"]
    state.rng_update.bit_generator.state = meta["rng"]["update"]
    return state


def resume(path: str | Path, episodes: int = 0, out_dir: str | Path | None = None) -> TrainState:
    state = load_state(path)
    start = len(state.metrics)
    run(state, episodes)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_state(state, out / "checkpoint.bin")
        write_metrics(state.metrics[start:], out / "metrics.csv")
    return state


def load_agent(path: str | Path) -> tuple[Agent, dict]:
    """Agent parameters from a training checkpoint, plus its metadata."""
    arrays, header = load_checkpoint(path)
    meta = header["meta"]
    agent_cfg = from_mapping(AgentConfig, meta["agent"], "agent")
    agent = Agent(meta["obs_dim"], meta["act_dim"], agent_cfg, header.get("seed", 0))
    for name, store in agent.stores().items():
        for k in store.names():
            store.set(k, arrays[f"params/{name}/{k}"])
    return agent, meta
