from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SimulationBlowUp(FloatingPointError):
    """Raised when an environment state becomes non-finite."""


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: float
    c: float
    terminal: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.r) and np.isfinite(self.c)):
            raise ValueError("transition reward and cost must be finite")
        if self.c < 0:
            raise ValueError(f"cost must be non-negative, got {self.c}")

    def as_vector(self) -> np.ndarray:
        """Flat encoder input ``[s, a, s', r, c]`` of length 2*d_s + d_a + 2."""
        return np.concatenate(
            [np.ravel(self.s), np.ravel(self.a), np.ravel(self.s_next), [self.r, self.c]]
        )


def stack_transitions(ts) -> dict:
    """Column arrays for a list of transitions."""
    return {
        "s": np.stack([np.ravel(t.s) for t in ts]),
        "a": np.stack([np.ravel(t.a) for t in ts]),
        "s_next": np.stack([np.ravel(t.s_next) for t in ts]),
        "r": np.array([t.r for t in ts]),
        "c": np.array([t.c for t in ts]),
        "terminal": np.array([t.terminal for t in ts], dtype=bool),
    }
