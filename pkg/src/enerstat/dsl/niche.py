from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from . import ast as A


@dataclass(frozen=True)
class Niche:
    """Property references a structure may sense and affect."""

    sensable: frozenset
    affectable: frozenset

    @classmethod
    def of(cls, sensable: Iterable[A.PropRef], affectable: Optional[Iterable[A.PropRef]] = None) -> "Niche":
        s = frozenset(sensable)
        return cls(s, s if affectable is None else frozenset(affectable))

    def extended(self, sensable: Iterable[A.PropRef] = (), affectable: Iterable[A.PropRef] = ()) -> "Niche":
        return Niche(self.sensable | frozenset(sensable), self.affectable | frozenset(affectable))


@dataclass(frozen=True)
class NicheViolation:
    mode: str
    ref: A.PropRef
    span: Optional[A.Span]

    def __str__(self) -> str:
        return f"{self.span or '?'}: cannot {self.mode} {self.ref}"


def niche_check(node: A.Node, niche: Niche) -> list[NicheViolation]:
    out = []
    for mode, ref, span in A.refs(node):
        allowed = niche.sensable if mode == A.SENSE else niche.affectable
        if ref not in allowed:
            out.append(NicheViolation(mode, ref, span))
    return out
