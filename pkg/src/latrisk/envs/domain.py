"""Physics factor vectors and the randomisation boxes they are drawn from."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Mapping

import numpy as np

PLATOON_FACTORS = (
    "mass_scale",
    "drag_scale",
    "drive_scale",
    "brake_scale",
    "inertia_scale",
    "friction_scale",
)


@dataclass(frozen=True)
class EnvParams:
    """Multiplicative scale factors on the calibrated vehicle defaults."""

    mass_scale: float = 1.0
    drag_scale: float = 1.0
    drive_scale: float = 1.0
    brake_scale: float = 1.0
    inertia_scale: float = 1.0
    friction_scale: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{f.name} must be strictly positive, got {v}")

    def as_dict(self) -> dict:
        return asdict(self)

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PLATOON_FACTORS])


@dataclass(frozen=True)
class DomainDistribution:
    """Independent uniform draws per factor over ``[lo, hi]`` boxes."""

    intervals: Mapping[str, tuple]
    label: str = "train"

    def __post_init__(self):
        if self.label not in ("train", "deploy"):
            raise ValueError(f"label must be 'train' or 'deploy', got {self.label!r}")
        for name, (lo, hi) in self.intervals.items():
            if not lo <= hi:
                raise ValueError(f"{name}: lo {lo} > hi {hi}")

    def sample(self, rng: np.random.Generator) -> dict:
        out = {}
        for name, (lo, hi) in self.intervals.items():
            out[name] = float(lo) if lo == hi else float(rng.uniform(lo, hi))
        return out

    def contains(self, values: Mapping[str, float]) -> bool:
        return all(lo <= values[k] <= hi for k, (lo, hi) in self.intervals.items())


def sample_env(dist: DomainDistribution, rng: np.random.Generator) -> EnvParams:
    return EnvParams(**dist.sample(rng))


# Training and deployment boxes of the platoon physics randomisation.
PLATOON_TRAIN = DomainDistribution(
    {
        "mass_scale": (0.9, 1.1),
        "drag_scale": (0.3, 0.5),
        "drive_scale": (1.5, 2.0),
        "brake_scale": (0.5, 1.0),
        "inertia_scale": (1.0, 1.5),
        "friction_scale": (0.5, 1.0),
    },
    label="train",
)

PLATOON_DEPLOY = DomainDistribution(
    {
        "mass_scale": (0.8, 1.2),
        "drag_scale": (0.3, 0.6),
        "drive_scale": (1.5, 2.5),
        "brake_scale": (0.2, 0.5),
        "inertia_scale": (1.0, 2.0),
        "friction_scale": (0.3, 0.8),
    },
    label="deploy",
)
