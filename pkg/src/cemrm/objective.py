"""Training reward over an object set and the test-time success predicate."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence


@dataclass(frozen=True)
class EvalOutcome:
    """Result of one design-on-one-object rollout.

    ``dq`` is the object's end displacement relative to the wrist in metres,
    ``(horizontal, vertical)`` with vertical positive up.
    """

    dq: tuple[float, float] = (0.0, 0.0)
    ground_collision: bool = False
    design_valid: bool = True
    contact_at_end: bool = False
    force_feedback_nonzero: bool = False
    lifted: bool = False
    diagnostic: str = ""

    @property
    def dq_y(self) -> float:
        return self.dq[1]

    @property
    def dq_norm(self) -> float:
        return math.hypot(*self.dq)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dq"] = list(self.dq)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EvalOutcome":
        data = dict(data)
        data["dq"] = tuple(data.get("dq", (0.0, 0.0)))
        return cls(**data)

    @classmethod
    def invalid(cls, reason: str = "invalid design") -> "EvalOutcome":
        return cls(design_valid=False, diagnostic=reason)


@dataclass(frozen=True)
class RewardWeights:
    """Weights for slip and sag penalties.

    ``offset`` is added to rewards that are not zeroed; it is off by default
    and exists so a held-but-slipping design can outrank a dropped one when
    the weights are negative.
    """

    w1: float = -1.0
    w2: float = -1.0
    collision_reward: float = 0.0
    offset: float = 0.0
    zero_on_collision: bool = True

    def __post_init__(self):
        for name in ("w1", "w2", "collision_reward", "offset"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def to_dict(self) -> dict:
        return asdict(self)


def design_reward(outcomes: Sequence[EvalOutcome], weights: RewardWeights = RewardWeights()) -> float:
    """Score a design over an object set; invalid designs score 0."""
    if not outcomes:
        raise ValueError("need at least one outcome")
    if any(not o.design_valid for o in outcomes):
        return 0.0
    collided = any(o.ground_collision for o in outcomes)
    if collided and weights.zero_on_collision:
        return float(weights.collision_reward)
    slip = sum(o.dq_norm for o in outcomes)
    sag = sum(abs(min(o.dq_y, 0.0)) for o in outcomes)
    return weights.w1 * slip + weights.w2 * sag - float(collided) + weights.offset


def grasp_success(outcome: EvalOutcome) -> bool:
    return bool(
        outcome.lifted
        and not outcome.ground_collision
        and outcome.contact_at_end
        and outcome.force_feedback_nonzero
    )
