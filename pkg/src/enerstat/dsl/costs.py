"""Static energy pricing of programs: free energy demand and limit."""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional

from . import ast as A

DEFAULT_COST = MappingProxyType({
    A.LITERAL: 1,
    A.READ_LOCAL: 1,
    A.WRITE_LOCAL: 1,
    A.ADD: 2,
    A.SUB: 2,
    A.COMPARE: 2,
    A.CLAMP: 3,
    A.IF: 3,
    A.MUL: 4,
    A.DIV: 8,
    A.SENSE: 5,
    A.AFFECT: 5,
    A.SEQ: 1,
})


class UnknownNodeKind(Exception):
    pass


@dataclass(frozen=True)
class CostTable:
    cost: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_COST))
    dissipation: Optional[Mapping[str, int]] = None

    def __post_init__(self):
        cost = dict(self.cost)
        diss = {k: 2 * v for k, v in cost.items()}
        diss.update(self.dissipation or {})
        for k, v in cost.items():
            if v < 1:
                raise ValueError(f"cost[{k}] must be >= 1, got {v}")
            if diss.get(k, 0) < v:
                raise ValueError(f"dissipation[{k}] must be >= cost[{k}]")
        object.__setattr__(self, "cost", MappingProxyType(cost))
        object.__setattr__(self, "dissipation", MappingProxyType(diss))

    @classmethod
    def default(cls) -> "CostTable":
        return cls()

    def with_overrides(self, cost: Optional[Mapping[str, int]] = None,
                       dissipation: Optional[Mapping[str, int]] = None) -> "CostTable":
        """New table; kinds whose cost changes get a fresh ``2x`` dissipation unless given."""
        new_cost = dict(self.cost)
        new_cost.update(cost or {})
        diss = {k: v for k, v in self.dissipation.items() if k not in (cost or {})}
        diss.update(dissipation or {})
        return CostTable(new_cost, diss)


def static_costs(node: A.Node, table: CostTable) -> tuple[int, int]:
    """``(fed, fel)``: summed per-node cost and dissipation over the whole tree.

    Every node bills, including those in branches that may never run.
    """
    fed = fel = 0
    cost, diss = table.cost, table.dissipation
    for n in A.walk(node):
        try:
            fed += cost[n.kind]
            fel += diss[n.kind]
        except KeyError:
            raise UnknownNodeKind(n.kind) from None
    return fed, fel
