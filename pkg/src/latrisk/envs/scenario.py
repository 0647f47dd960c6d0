"""Environment families and their YAML scenario description."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..configtools import ConfigError, from_mapping
from .diagnostic import DiagnosticFamily
from .domain import PLATOON_TRAIN, DomainDistribution, EnvParams, sample_env
from .platoon import FvdParams, LeadCycle, PlatoonConfig, PlatoonEnv, RewardWeights, VehicleConstants


@dataclass(frozen=True)
class PlatoonFamily:
    box: DomainDistribution = PLATOON_TRAIN
    cfg: PlatoonConfig = field(default_factory=PlatoonConfig)

    obs_dim = 9
    act_dim = 1

    def sample(self, rng: np.random.Generator) -> EnvParams:
        return sample_env(self.box, rng)

    def instance(self, params: EnvParams, seed: int) -> PlatoonEnv:
        return PlatoonEnv(params, self.cfg, seed)

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    @property
    def gamma(self):
        return None


@dataclass
class ScenarioConfig:
    """Declarative family description; ``kind`` selects platoon or diagnostic."""

    kind: str = "diagnostic"
    label: str = "train"
    factors: dict = field(default_factory=dict)
    horizon: int = 0
    dt: float = 0.05
    fvd: FvdParams = field(default_factory=FvdParams)
    reward: RewardWeights = field(default_factory=RewardWeights)
    vehicle: VehicleConstants = field(default_factory=VehicleConstants)
    lead: LeadCycle = field(default_factory=LeadCycle)
    n_vehicles: int = 10
    slope: tuple = ()
    offset: float = 0.0
    noise: float = 0.3
    gamma: float = 0.95

    def __post_init__(self):
        if self.kind not in ("platoon", "diagnostic"):
            raise ConfigError("kind", f"must be 'platoon' or 'diagnostic', got {self.kind!r}")


def build_family(sc: ScenarioConfig):
    if sc.kind == "diagnostic":
        box = DomainDistribution(sc.factors or {"hazard": (0.5, 1.5)}, label=sc.label)
        return DiagnosticFamily(box, tuple(sc.slope), sc.horizon or 20, sc.gamma, sc.noise, sc.offset)
    box = DomainDistribution(sc.factors, label=sc.label) if sc.factors else PLATOON_TRAIN
    cfg = PlatoonConfig(
        n_vehicles=sc.n_vehicles,
        dt=sc.dt,
        horizon=sc.horizon or 1200,
        fvd=sc.fvd,
        vehicle=sc.vehicle,
        reward=sc.reward,
        lead=sc.lead,
    )
    return PlatoonFamily(box, cfg)


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read scenario: {exc}") from exc
    return from_mapping(ScenarioConfig, data, "scenario")
