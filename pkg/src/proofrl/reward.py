"""Shaped edge rewards: base step cost plus branching/time penalties.

Every applied method costs -1. Transitions into ordinary states additionally
pay for blowing up the number of applicable methods, for slow environment
calls, and for calls that only succeeded after a timeout retry. Edges into
terminals and case splits carry only the base cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class EdgeKind(Enum):
    NORMAL = "normal"
    TERMINAL = "terminal"
    TO_AND = "to_and"


@dataclass(frozen=True)
class RewardParams:
    beta: float = 0.1          # branching penalty weight
    alpha: float = 0.1         # soft-time penalty weight
    tau: float = 0.1           # hard-timeout penalty weight
    t_clip: float = 4.0        # seconds; soft-time normalizer
    hard_penalty: float = 1.0  # penalty value when the retry fired

    def __post_init__(self):
        if self.beta < 0 or self.alpha < 0 or self.tau < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.t_clip <= 0:
            raise ValueError("t_clip must be positive")
        if not 0.0 <= self.hard_penalty <= 1.0:
            raise ValueError("hard_penalty must be in [0, 1]")


def branching_penalty(child_method_count: int, path_max_branching: int) -> float:
    """Relative increase of applicable methods over the worst seen on the path.

    Clamped to [0, 1]; zero when branching does not grow.
    """
    if path_max_branching < 1:
        raise ValueError("path_max_branching must be >= 1")
    excess = (child_method_count - path_max_branching) / path_max_branching
    return min(1.0, max(0.0, excess))


def soft_time_penalty(elapsed: float, t_clip: float) -> float:
    """Environment call time, clipped at t_clip and normalized to [0, 1]."""
    if elapsed < 0:
        raise ValueError("elapsed must be >= 0")
    return min(elapsed, t_clip) / t_clip


def edge_reward(
    kind: EdgeKind,
    branching: float,
    soft_time: float,
    hard_timeout: bool,
    params: RewardParams,
) -> float:
    """Shaped reward for one edge; always <= -1."""
    if kind in (EdgeKind.TERMINAL, EdgeKind.TO_AND):
        return -1.0
    hard = params.hard_penalty if hard_timeout else 0.0
    return -(1.0 + params.beta * branching + params.alpha * soft_time + params.tau * hard)
