"""Longitudinal vehicle platoon: scripted lead, FVD human drivers, one controlled ego.

Vehicle 0 follows a synthetic drive cycle, vehicle 1 is a human-driven
vehicle (HDV), vehicle 2 is the ego, and vehicles 3.. are HDVs.  The ego's
throttle/brake command ``u`` in [-1, 1] drives a point-mass longitudinal model
whose parameters are scaled by an :class:`EnvParams` draw.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .base import SimulationBlowUp, Transition
from .domain import EnvParams

EGO = 2
G = 9.81


class Collision(Exception):
    """A gap reached zero; iTTC is undefined there."""


@dataclass(frozen=True)
class FvdParams:
    """Full-velocity-difference law ``a = kappa (V(gap) - v) + lam (v_front - v)``.

    ``V(gap) = v1 + v2 * tanh(c1 * gap - c2)`` with ``gap`` the bumper-to-bumper
    distance.  The defaults are string-unstable around 7-10 m/s, so a lead
    perturbation grows as it travels upstream.
    """

    kappa: float = 0.41
    lam: float = 0.3
    v1: float = 6.75
    v2: float = 7.91
    c1: float = 0.13
    c2: float = 1.57

    def __post_init__(self):
        if self.kappa <= 0 or self.lam <= 0:
            raise ValueError("FVD sensitivities kappa and lam must be positive")

    def v_opt(self, gap):
        return self.v1 + self.v2 * np.tanh(self.c1 * np.asarray(gap) - self.c2)

    def equilibrium_gap(self, v: float) -> float:
        return float((np.arctanh((v - self.v1) / self.v2) + self.c2) / self.c1)


def fvd_accel(gap, v_self, v_front, fvd: FvdParams):
    return fvd.kappa * (fvd.v_opt(gap) - v_self) + fvd.lam * (np.asarray(v_front) - v_self)


@dataclass(frozen=True)
class VehicleConstants:
    mass: float = 1000.0
    drag_coeff: float = 0.3
    drive_force: float = 5000.0
    brake_force: float = 18000.0
    friction_coeff: float = 2.0
    engine_inertia: float = 10.0
    wheel_radius: float = 0.3
    frontal_area: float = 2.2
    air_density: float = 1.225
    rolling_coeff: float = 0.01
    length: float = 5.0


@dataclass(frozen=True)
class RewardWeights:
    f_v: float = 0.5
    f_s: float = 0.005
    f_a: float = 0.1
    f_j: float = 0.01
    l_c: float = 10.0
    v_max: float = 15.0


@dataclass(frozen=True)
class LeadCycle:
    """Cruise, braking pulse to ``v_low``, dwell, re-acceleration; repeated."""

    v_cruise: float = 10.0
    v_low: float = 4.0
    decel: float = 1.5
    accel: float = 1.0
    cruise_time: float = 12.0
    dwell_time: float = 4.0
    max_phase_offset: float = 6.0

    def period(self) -> float:
        dv = self.v_cruise - self.v_low
        return self.cruise_time + dv / self.decel + self.dwell_time + dv / self.accel

    def speed(self, t: float, phase: float = 0.0) -> float:
        dv = self.v_cruise - self.v_low
        tt = (t + phase) % self.period()
        if tt < self.cruise_time:
            return self.v_cruise
        tt -= self.cruise_time
        if tt < dv / self.decel:
            return self.v_cruise - self.decel * tt
        tt -= dv / self.decel
        if tt < self.dwell_time:
            return self.v_low
        tt -= self.dwell_time
        return self.v_low + self.accel * tt


@dataclass(frozen=True)
class PlatoonConfig:
    n_vehicles: int = 10
    dt: float = 0.05
    horizon: int = 1200
    collision_cost: float = 10.0
    fvd: FvdParams = field(default_factory=FvdParams)
    vehicle: VehicleConstants = field(default_factory=VehicleConstants)
    reward: RewardWeights = field(default_factory=RewardWeights)
    lead: LeadCycle = field(default_factory=LeadCycle)

    def __post_init__(self):
        if self.n_vehicles < 4:
            raise ValueError("platoon needs lead, HDV, ego and at least one follower")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class PlatoonState:
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    ego_jerk: float
    step: int
    phase: float
    lead_jerk: float = 0.0

    def gaps(self, length: float) -> np.ndarray:
        """``gaps[i]`` is the distance from vehicle i+1 to vehicle i."""
        return self.pos[:-1] - self.pos[1:] - length

    def observation(self, length: float) -> np.ndarray:
        g = self.gaps(length)
        return np.array(
            [
                self.vel[EGO],
                self.acc[EGO],
                self.ego_jerk,
                self.vel[EGO - 1],
                self.acc[EGO - 1],
                self.lead_jerk,
                g[EGO - 1],
                self.vel[EGO + 1],
                g[EGO],
            ]
        )


def ittc_cost(v_ego, v_lead, l_lead, v_follow, l_follow) -> float:
    """Inverse time-to-collision toward the leader and from the follower, whichever is larger."""
    if l_lead <= 0 or l_follow <= 0:
        raise Collision(f"gap reached zero (l_lead={l_lead}, l_follow={l_follow})")
    front = max(v_ego - v_lead, 0.0) / l_lead
    rear = max(v_follow - v_ego, 0.0) / l_follow
    return float(max(front, rear))


def reward_terms(obs: np.ndarray, w: RewardWeights) -> tuple:
    """``(r_v, r_s, r_a, r_j, r)`` for an observation vector as returned by the env."""
    v_ego, a_ego, j_ego, v_lead, _, _, l_lead, _, _ = obs
    close = 1.0 if l_lead < w.l_c else 0.0
    r_v = -w.f_v * close * max(v_ego - v_lead, 0.0) ** 2
    r_s = w.f_s * min(w.v_max, v_ego) ** 2
    r_a = -w.f_a * a_ego**2
    r_j = -w.f_j * j_ego**2
    return r_v, r_s, r_a, r_j, r_v + r_s + r_a + r_j


def ego_accel(v: float, u: float, params: EnvParams, veh: VehicleConstants) -> float:
    """Net longitudinal acceleration of the ego for throttle/brake ``u``."""
    m = veh.mass * params.mass_scale
    m_eff = m + veh.engine_inertia * params.inertia_scale / veh.wheel_radius**2
    drive = max(u, 0.0) * veh.drive_force * params.drive_scale
    brake = max(-u, 0.0) * veh.brake_force * params.brake_scale
    brake = min(brake, veh.friction_coeff * params.friction_scale * m * G)
    moving = 1.0 if v > 0 else 0.0
    drag = 0.5 * veh.air_density * veh.drag_coeff * params.drag_scale * veh.frontal_area * v * v
    rolling = veh.rolling_coeff * m * G * moving
    return (drive - (brake + drag + rolling) * moving) / m_eff


def initial_state(cfg: PlatoonConfig, phase: float = 0.0) -> PlatoonState:
    n = cfg.n_vehicles
    v0 = cfg.lead.speed(0.0, phase)
    gap = cfg.fvd.equilibrium_gap(v0)
    spacing = gap + cfg.vehicle.length
    pos = -spacing * np.arange(n, dtype=float)
    return PlatoonState(
        pos=pos, vel=np.full(n, v0), acc=np.zeros(n), ego_jerk=0.0, step=0, phase=phase
    )


def platoon_step(
    state: PlatoonState,
    u: float | None,
    params: EnvParams,
    cfg: PlatoonConfig,
):
    """Advance one control period.

    ``u=None`` lets the ego drive by the FVD law as well (the uncontrolled
    baseline).  Returns ``(next_state, r, c, done)``.
    """
    if u is not None and not -1.0 <= u <= 1.0:
        raise ValueError(f"throttle u must lie in [-1, 1], got {u}")
    dt = cfg.dt
    veh = cfg.vehicle
    n = cfg.n_vehicles
    gaps = state.gaps(veh.length)

    acc = np.empty(n)
    t_next = (state.step + 1) * dt
    v_lead_next = cfg.lead.speed(t_next, state.phase)
    acc[0] = (v_lead_next - state.vel[0]) / dt
    acc[1:] = fvd_accel(gaps, state.vel[1:], state.vel[:-1], cfg.fvd)
    if u is not None:
        acc[EGO] = ego_accel(state.vel[EGO], u, params, veh)

    vel = np.maximum(state.vel + acc * dt, 0.0)
    vel[0] = v_lead_next
    realised = (vel - state.vel) / dt
    pos = state.pos + vel * dt
    jerk = (realised[EGO] - state.acc[EGO]) / dt
    lead_jerk = (realised[EGO - 1] - state.acc[EGO - 1]) / dt

    nxt = PlatoonState(
        pos=pos,
        vel=vel,
        acc=realised,
        ego_jerk=float(jerk),
        step=state.step + 1,
        phase=state.phase,
        lead_jerk=float(lead_jerk),
    )
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel)) and np.isfinite(jerk)):
        raise SimulationBlowUp(f"non-finite platoon state at step {nxt.step}")

    obs = nxt.observation(veh.length)
    *_, r = reward_terms(obs, cfg.reward)
    new_gaps = nxt.gaps(veh.length)
    done = nxt.step >= cfg.horizon
    try:
        if np.any(new_gaps <= 0):
            raise Collision("platoon gap reached zero")
        c = ittc_cost(obs[0], obs[3], obs[6], obs[7], obs[8])
    except Collision:
        c = cfg.collision_cost
        done = True
    return nxt, float(r), float(c), bool(done)


class PlatoonEnv:
    """Stateful wrapper exposing ``reset``/``step`` over :func:`platoon_step`."""

    obs_dim = 9
    act_dim = 1

    def __init__(self, params: EnvParams, cfg: PlatoonConfig | None = None, seed: int = 0):
        self.params = params
        self.cfg = cfg or PlatoonConfig()
        self._rng = np.random.default_rng(seed)
        self.state: PlatoonState | None = None

    def reset(self) -> np.ndarray:
        phase = float(self._rng.uniform(0.0, self.cfg.lead.max_phase_offset))
        self.state = initial_state(self.cfg, phase)
        return self.state.observation(self.cfg.vehicle.length)

    def step(self, a, z=None):
        u = float(np.clip(np.ravel(a)[0], -1.0, 1.0))
        s = self.state.observation(self.cfg.vehicle.length)
        self.state, r, c, done = platoon_step(self.state, u, self.params, self.cfg)
        s2 = self.state.observation(self.cfg.vehicle.length)
        terminal = done and self.state.step < self.cfg.horizon
        return Transition(s, np.array([u]), s2, r, c, terminal), done


def run_uncontrolled(cfg: PlatoonConfig, params: EnvParams | None = None, phase: float = 0.0, steps: int | None = None):
    """Roll the platoon with every follower on FVD; returns the speed history (steps+1, n)."""
    params = params or EnvParams()
    st = initial_state(cfg, phase)
    hist = [st.vel.copy()]
    for _ in range(steps or cfg.horizon):
        st, _, _, _ = platoon_step(st, None, params, cfg)
        hist.append(st.vel.copy())
    return np.array(hist)


def oscillation_ratio(speeds: np.ndarray, vehicle: int = EGO) -> float:
    """Speed standard deviation of ``vehicle`` over that of the vehicle ahead of it."""
    return float(np.std(speeds[:, vehicle]) / np.std(speeds[:, vehicle - 1]))


def write_trace(path: str | Path, times, speeds, us, rs, cs) -> None:
    """Episode trace CSV: t, per-vehicle speed, ego command, reward, cost, cumulative cost."""
    speeds = np.asarray(speeds)
    n = speeds.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"v{i}" for i in range(n)] + ["u", "r", "c", "cum_cost"])
        cum = 0.0
        for t, v, u, r, c in zip(times, speeds, us, rs, cs):
            cum += c
            w.writerow([repr(float(t))] + [repr(float(x)) for x in v] + [repr(float(u)), repr(float(r)), repr(float(c)), repr(cum)])
