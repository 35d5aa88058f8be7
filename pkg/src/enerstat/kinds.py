"""Structure kinds, the birth-ordered catalog, and causal niches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

from .dsl import ast as A
from .dsl.costs import CostTable, static_costs
from .dsl.evaluator import Program
from .dsl.niche import Niche, NicheViolation, niche_check
from .dsl.parser import DslError, parse, to_source
from .energy import PerturbationModel

# per-instance environment entries; alloc_self is writable, the rest are views
ALLOC = "alloc_self"
ENV_VIEWS = ("fed_self", "fel_self", "buffer_self", "loop_energy_self", "loop_setpoint_self", "step")
# every instance has a position; writing these moves it
POSITION = ("x", "y")


class NicheError(DslError):
    def __init__(self, violations: list[NicheViolation], source: Optional[str] = None):
        self.violations = violations
        first = violations[0]
        line, col = (first.span.line, first.span.col) if first.span else (0, 0)
        msg = "; ".join(f"cannot {v.mode} {v.ref}" for v in violations)
        super().__init__(f"niche violation: {msg}", line, col, source)


class IndexBeyondNext(ValueError):
    pass


@dataclass(frozen=True)
class PropSpec:
    default: int = 0
    perturbation: PerturbationModel = PerturbationModel()

    def default_energy(self) -> int:
        return self.perturbation.stored(self.default)


@dataclass
class StructureKind:
    index: int
    name: str
    program: A.Node
    fed: int
    fel: int
    radius: int
    props: dict
    niche: Niche
    birth_alloc: int
    source: str = ""
    origin: str = "scenario"
    compiled: Program = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.compiled is None:
            self.compiled = Program(self.program)

    @property
    def assembly_cost(self) -> int:
        return self.fed

    @property
    def default_energy(self) -> int:
        return sum(p.default_energy() for p in self.props.values())

    def struct_refs(self) -> set:
        return {r.index for _, r, _ in A.refs(self.program) if r.scope == A.STRUCT}


@dataclass
class Catalog:
    kinds: list = field(default_factory=list)
    discovery_steps: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.kinds)

    def __getitem__(self, i: int) -> StructureKind:
        return self.kinds[i]

    def __iter__(self):
        return iter(self.kinds)

    def append(self, kind: StructureKind) -> None:
        if kind.index != len(self.kinds):
            raise ValueError(f"kind index {kind.index} but catalog has {len(self.kinds)} kinds")
        self.kinds.append(kind)

    def by_name(self, name: str) -> StructureKind:
        for k in self.kinds:
            if k.name == name:
                return k
        raise KeyError(name)


def niche_of(index: int, catalog: Catalog, env_props: Iterable[str]) -> Niche:
    """Environment properties plus the causal properties of every earlier kind."""
    if index > len(catalog):
        raise IndexBeyondNext(f"index {index} beyond next free index {len(catalog)}")
    refs = {A.PropRef.env(n) for n in env_props}
    for j in range(index):
        refs.update(A.PropRef.of(j, p) for p in catalog[j].props)
    return Niche.of(refs)


def kind_niche(index: int, catalog: Catalog, env_props: Iterable[str], own_props: Iterable[str]) -> Niche:
    """The full niche a kind's program is checked against.

    Adds the per-instance allocation entry, read-only environment views and
    the kind's own properties (including its position) to :func:`niche_of`.
    """
    base = niche_of(index, catalog, env_props)
    own = {A.PropRef.own(p) for p in (*own_props, *POSITION)}
    alloc = {A.PropRef.env(ALLOC)}
    views = {A.PropRef.env(v) for v in ENV_VIEWS}
    return base.extended(sensable=own | alloc | views, affectable=own | alloc)


def make_kind(index: int, name: str, program: Union[str, A.Node], catalog: Catalog,
              env_props: Iterable[str], table: CostTable,
              props: Optional[Mapping[str, PropSpec]] = None, radius: int = 1,
              birth_alloc: Optional[int] = None, origin: str = "scenario",
              source_name: Optional[str] = None) -> StructureKind:
    """Parse, niche-check and price a program into a catalog-ready kind."""
    if isinstance(program, str):
        source = program
        ast = parse(program, name=source_name)
    else:
        ast = program
        source = to_source(program)
    props = dict(props or {})
    clash = set(props) & set(POSITION)
    if clash:
        raise ValueError(f"property names {sorted(clash)} are reserved for position")
    niche = kind_niche(index, catalog, env_props, props)
    bad = niche_check(ast, niche)
    if bad:
        raise NicheError(bad, source_name)
    fed, fel = static_costs(ast, table)
    return StructureKind(
        index=index, name=name, program=ast, fed=fed, fel=fel, radius=radius,
        props=props, niche=niche, birth_alloc=fed if birth_alloc is None else birth_alloc,
        source=source, origin=origin,
    )
