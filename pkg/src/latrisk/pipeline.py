"""Glue between a trained agent and the calibration / deployment stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import (
    CalibrationConfig,
    CalibrationTable,
    DiagnosticEvaluator,
    RiskSchedule,
    SequentialEvaluator,
    calibrate,
)
from .deployment import DeployResult, RefineConfig, refine_action, run_deployment
from .envs.diagnostic import DiagnosticFamily
from .numerics import SeededRng


def nominal_policy(actor_fn):
    return lambda s, z: actor_fn(s, z)


def refined_policies(actor_fn, reward_critic, cost_critic, d: float, cfg: RefineConfig):
    """``eta -> policy`` running the refinement at risk level ``eta``."""

    def make(eta: float):
        def policy(s, z):
            return refine_action(s, z, eta, actor_fn, reward_critic, cost_critic, d, cfg).action

        return policy

    return make


def sample_specs(family, n: int, seed: int, stream: int) -> list:
    rng = SeededRng(seed, (stream,)).generator()
    return [family.sample(rng) for _ in range(n)]


def evaluator_for(family, specs, episodes: int, gamma: float):
    if isinstance(family, DiagnosticFamily):
        return DiagnosticEvaluator(specs, episodes)
    return SequentialEvaluator(family, specs, episodes, gamma)


def calibrate_policy(
    family,
    encoder,
    actor_fn,
    reward_critic,
    cost_critic,
    d: float,
    cal: CalibrationConfig,
    refine: RefineConfig,
    gamma: float,
) -> CalibrationTable:
    """Calibrate on ``cal.n_envs`` fresh environments drawn from ``family``."""
    specs = sample_specs(family, cal.n_envs, cal.seed, 7)
    ev = evaluator_for(family, specs, cal.episodes, gamma)
    table = calibrate(
        ev, encoder, nominal_policy(actor_fn),
        refined_policies(actor_fn, reward_critic, cost_critic, d, refine), cal,
    )
    table.meta["d"] = repr(float(d))
    return table


@dataclass
class DeploySummary:
    results: list
    mean_cost: float
    mean_reward: float
    early_cost: float
    etas: list

    def lines(self) -> list[str]:
        return [
            f"mean_episodic_cost = {self.mean_cost!r}",
            f"mean_episodic_reward = {self.mean_reward!r}",
            f"first_episode_cost = {self.early_cost!r}",
            f"eta_start = {self.etas[0]!r}" if self.etas else "eta_start = none",
            f"eta_end = {self.etas[-1]!r}" if self.etas else "eta_end = none",
        ]


def deploy_many(
    family,
    specs,
    encoder,
    actor_fn,
    reward_critic,
    cost_critic,
    schedule: RiskSchedule,
    d: float,
    refine: RefineConfig,
    episodes: int,
    gamma: float,
    seed: int,
    fixed_eta: float | None = None,
    max_steps: int | None = None,
) -> DeploySummary:
    """One independent deployment (fresh posterior) per environment spec."""
    results: list[DeployResult] = []
    for i, spec in enumerate(specs):
        env = family.instance(spec, int(SeededRng(seed, (11, i)).generator().integers(2**31)))
        results.append(run_deployment(
            env, encoder, actor_fn, reward_critic, cost_critic, schedule, d, refine,
            episodes, gamma, max_steps, fixed_eta,
        ))
    costs = [c for r in results for c in r.episode_costs]
    rewards = [x for r in results for x in r.episode_rewards]
    early = [r.episode_costs[0] for r in results if r.episode_costs]
    etas = results[0].etas if results else []
    return DeploySummary(
        results,
        float(np.mean(costs)) if costs else float("nan"),
        float(np.mean(rewards)) if rewards else float("nan"),
        float(np.mean(early)) if early else float("nan"),
        etas,
    )
