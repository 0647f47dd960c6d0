from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AliasingBandit:
    """Two tasks sharing one state whose best actions disagree.

    ``q[k, j]`` is the reward value of action j in task k at the shared state.
    """

    q: np.ndarray
    delta: float

    def regret(self, task: int, p: float) -> float:
        """Expected one-step regret in ``task`` of playing action 0 with probability ``p``."""
        row = self.q[task]
        return float(row.max() - (p * row[0] + (1.0 - p) * row[1]))


def aliasing_tasks(delta: float, swap: bool = False) -> AliasingBandit:
    """Tight construction: each task prefers its own action by exactly ``delta``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    q = np.array([[delta, 0.0], [0.0, delta]])
    if swap:
        q = q[::-1].copy()
    return AliasingBandit(q, float(delta))
