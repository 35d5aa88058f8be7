"""Action policies for loop reconfiguration and their hebbian-like updates.

Weights are exact :class:`~fractions.Fraction` values so that sampling and
normalisation stay reproducible bit for bit.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

STASIS = "Stasis"
ACTION = "Action"
CAP = "Cap"
FATAL = "Fatal"

REACHED_STASIS = "ReachedStasis"
REACHED_CAP = "ReachedCap"

ASSEMBLE = "assemble"
DISASSEMBLE_OLDEST = "disassemble_oldest"
NOOP = "noop"


class EmptyPolicy(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    op: str
    kind: Optional[int] = None

    def __str__(self) -> str:
        return self.op if self.kind is None else f"{self.op}({self.kind})"


@dataclass(frozen=True)
class ActionPolicy:
    actions: tuple
    weights: tuple
    eta: Fraction = Fraction(1, 10)

    def __post_init__(self):
        w = tuple(Fraction(x) for x in self.weights)
        eta = Fraction(self.eta)
        if len(w) != len(self.actions):
            raise ValueError("one weight per action")
        if any(x <= 0 for x in w):
            raise ValueError("weights must be strictly positive")
        if not 0 < eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "eta", eta)

    def probabilities(self) -> list[Fraction]:
        total = sum(self.weights)
        return [w / total for w in self.weights]


@dataclass
class ActionTrace:
    entries: list = field(default_factory=list)
    window_entered_at: Optional[int] = None

    def record(self, step: int, action: int, energy: int) -> None:
        self.entries.append((step, action, energy))

    def clear(self) -> None:
        self.entries.clear()
        self.window_entered_at = None


def select_action(policy: ActionPolicy, window: str, rng: random.Random) -> Optional[int]:
    """Sample an action index in the Action or Cap window; ``None`` otherwise."""
    if not policy.actions:
        raise EmptyPolicy("policy has no actions")
    if window not in (ACTION, CAP):
        return None
    denom = math.lcm(*(w.denominator for w in policy.weights))
    scaled = [w.numerator * (denom // w.denominator) for w in policy.weights]
    r = rng.randrange(sum(scaled))
    for i, s in enumerate(scaled):
        if r < s:
            return i
        r -= s
    raise AssertionError("unreachable")


def credit_update(policy: ActionPolicy, trace: ActionTrace | Sequence, outcome: str) -> ActionPolicy:
    """Strengthen (stasis) or weaken (cap) every action in the trace, then renormalise.

    Repeated entries compound. An empty trace returns the policy unchanged.
    """
    entries = trace.entries if isinstance(trace, ActionTrace) else list(trace)
    if not entries:
        return policy
    if outcome == REACHED_STASIS:
        factor = 1 + policy.eta
    elif outcome == REACHED_CAP:
        factor = 1 - policy.eta
    else:
        raise ValueError(f"unknown outcome {outcome!r}")
    counts: dict[int, int] = {}
    for e in entries:
        a = e[1] if isinstance(e, tuple) else e
        counts[a] = counts.get(a, 0) + 1
    w = list(policy.weights)
    for a, n in counts.items():
        w[a] *= factor ** n
    total = sum(w)
    return ActionPolicy(policy.actions, tuple(x / total for x in w), policy.eta)
