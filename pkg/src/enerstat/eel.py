"""The environmental enerstatic loop: free pool, allocation table, and invention.

The EEL owns the per-instance allocation table (default 0 uE per step),
invents new structure kinds inside their causal niche, and hands out energy
at the start of every step.
"""

from __future__ import annotations

import json
import os
import random
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Protocol

from .dsl import ast as A
from .dsl.costs import CostTable
from .dsl.parser import DslError, to_source
from .energy import LINEAR, POOL, QUADRATIC, PerturbationModel, buffer
from .kinds import ALLOC, Catalog, PropSpec, StructureKind, kind_niche, make_kind, niche_of

if TYPE_CHECKING:
    from .world import World

PROVIDER_ENV = "ENERSTAT_PROVIDER_URL"

STARVED = "Starved"
OVER_LIMIT = "OverLimit"


class GenerationExhausted(RuntimeError):
    pass


class ProviderUnavailable(RuntimeError):
    pass


class InventionBudgetExhausted(RuntimeError):
    pass


class Provider(Protocol):
    def generate(self, request: dict) -> str: ...


class HttpProvider:
    """POSTs a niche description as JSON and reads back program text."""

    def __init__(self, url: str, timeout: float = 5.0):
        self.url = url
        self.timeout = timeout

    def generate(self, request: dict) -> str:
        body = json.dumps(request, sort_keys=True).encode()
        req = urllib.request.Request(self.url, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                text = resp.read().decode("utf-8")
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise ProviderUnavailable(f"{self.url}: {exc}") from exc
        if text.lstrip().startswith("{"):
            try:
                text = json.loads(text)["source"]
            except (ValueError, KeyError, TypeError):
                pass
        return text


DEFAULT_MIX = {
    A.LITERAL: 3, A.SENSE: 4, A.READ_LOCAL: 1, A.ADD: 2, A.SUB: 2, A.MUL: 1,
    A.DIV: 1, A.COMPARE: 1, A.IF: 1, A.CLAMP: 1,
}


@dataclass
class GeneratorConfig:
    mode: str = "grammar"
    max_nodes: int = 14
    max_statements: int = 3
    kind_mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    literal_range: tuple = (-8, 8)
    max_props: int = 2
    radius_range: tuple = (1, 4)
    # probability of drawing a reference from outside the niche (fuzzing the rejection path)
    stray_ref_rate: float = 0.0
    # per-step allocation above fed for invented kinds, capped at fel
    alloc_extra: int = 0
    max_attempts: int = 64
    provider_url: Optional[str] = None
    timeout: float = 5.0


@dataclass
class EEL:
    catalog: Catalog
    env_props: tuple
    table: CostTable
    generator: Optional[GeneratorConfig] = None
    alloc: dict = field(default_factory=dict)
    invention_budget: int = 0
    production_budget: int = 0
    epoch: int = 100
    invented_this_epoch: int = 0
    provider: Optional[Provider] = None

    def provider_for(self) -> Provider:
        if self.provider is None:
            url = (self.generator and self.generator.provider_url) or os.environ.get(PROVIDER_ENV)
            if not url:
                raise ProviderUnavailable(f"no provider url configured (set {PROVIDER_ENV})")
            self.provider = HttpProvider(url, self.generator.timeout if self.generator else 5.0)
        return self.provider


class _ProgramGen:
    """Random programs over a niche, drawn node by node from a kind mix."""

    def __init__(self, cfg: GeneratorConfig, rng: random.Random, sensable: list, affectable: list,
                 stray: list):
        self.cfg = cfg
        self.rng = rng
        self.sensable = sensable
        self.affectable = affectable
        self.stray = stray
        self.locals: list[str] = []
        self.budget = cfg.max_nodes

    def pick_ref(self, pool: list) -> A.PropRef:
        if self.stray and self.rng.random() < self.cfg.stray_ref_rate:
            return self.rng.choice(self.stray)
        return self.rng.choice(pool)

    def leaf(self) -> A.Node:
        self.budget -= 1
        choices = [A.LITERAL, A.SENSE] + ([A.READ_LOCAL] if self.locals else [])
        weights = [self.cfg.kind_mix.get(k, 0) or 1 for k in choices]
        k = self.rng.choices(choices, weights)[0]
        if k == A.SENSE:
            return A.sense(self.pick_ref(self.sensable))
        if k == A.READ_LOCAL:
            return A.local(self.rng.choice(self.locals))
        return A.lit(self.rng.randint(*self.cfg.literal_range))

    def expr(self, depth: int = 0) -> A.Node:
        if self.budget <= 3 or depth >= 5:
            return self.leaf()
        kinds = sorted(self.cfg.kind_mix)
        weights = [self.cfg.kind_mix[k] for k in kinds]
        k = self.rng.choices(kinds, weights)[0]
        if k in (A.LITERAL, A.SENSE, A.READ_LOCAL):
            return self.leaf()
        self.budget -= 1
        if k in (A.ADD, A.SUB, A.MUL, A.DIV):
            return A.binop(k, self.expr(depth + 1), self.expr(depth + 1))
        if k == A.COMPARE:
            op = self.rng.choice(A.COMPARE_OPS)
            return A.compare(op, self.expr(depth + 1), self.expr(depth + 1))
        if k == A.IF:
            return A.if_(self.expr(depth + 1), self.expr(depth + 1), self.expr(depth + 1))
        return A.clamp(self.expr(depth + 1), self.expr(depth + 1), self.expr(depth + 1))

    def program(self) -> A.Node:
        n = self.rng.randint(1, self.cfg.max_statements)
        stmts = []
        for i in range(n):
            last = i == n - 1
            if not last and self.rng.random() < 0.4:
                name = f"v{len(self.locals)}"
                self.budget -= 1
                stmts.append(A.let(name, self.expr()))
                self.locals.append(name)
            else:
                self.budget -= 1
                stmts.append(A.affect(self.pick_ref(self.affectable), self.expr()))
        return stmts[0] if len(stmts) == 1 else A.seq(*stmts)


def _invent_props(cfg: GeneratorConfig, rng: random.Random) -> dict:
    props = {}
    for i in range(rng.randint(0, cfg.max_props)):
        shape = rng.choice((LINEAR, QUADRATIC))
        props[f"p{i}"] = PropSpec(rng.randint(0, 4), PerturbationModel(shape, rng.randint(1, 2)))
    return props


def _stray_refs(index: int, catalog: Catalog) -> list:
    out = [A.PropRef.env("undeclared")]
    out += [A.PropRef.of(j, "p0") for j in range(index, index + 3)]
    return out


def generate_program(cfg: GeneratorConfig, rng: random.Random, index: int, catalog: Catalog,
                     env_props, props: dict) -> A.Node:
    niche = kind_niche(index, catalog, env_props, props)
    gen = _ProgramGen(cfg, rng, sorted(niche.sensable), sorted(niche.affectable),
                      _stray_refs(index, catalog) if cfg.stray_ref_rate > 0 else [])
    return gen.program()


def niche_request(index: int, catalog: Catalog, env_props, props: dict, cfg: GeneratorConfig) -> dict:
    """The document sent to an external provider for one invention."""
    niche = kind_niche(index, catalog, env_props, props)
    return {
        "index": index,
        "sensable": sorted(str(r) for r in niche.sensable),
        "affectable": sorted(str(r) for r in niche.affectable),
        "own_properties": sorted(props),
        "max_nodes": cfg.max_nodes,
        "grammar": "enerstat-cp/1",
    }


def invent_structure(eel: EEL, catalog: Catalog, rng: random.Random) -> StructureKind:
    """Invent one kind for the next catalog slot and append it.

    Candidates that fail to parse or step outside the niche are discarded and
    regenerated, up to ``max_attempts`` times.
    """
    cfg = eel.generator
    if cfg is None:
        raise GenerationExhausted("EEL has no generator configured")
    if eel.invented_this_epoch >= eel.invention_budget:
        raise InventionBudgetExhausted(f"{eel.invention_budget} inventions per epoch already used")
    index = len(catalog)
    for attempt in range(cfg.max_attempts):
        props = _invent_props(cfg, rng)
        radius = rng.randint(*cfg.radius_range)
        if cfg.mode == "grammar":
            source = to_source(generate_program(cfg, rng, index, catalog, eel.env_props, props))
        elif cfg.mode == "external":
            source = eel.provider_for().generate(niche_request(index, catalog, eel.env_props, props, cfg))
        else:
            raise ValueError(f"unknown generator mode {cfg.mode!r}")
        try:
            kind = make_kind(index, f"k{index}", source, catalog, eel.env_props, eel.table,
                             props=props, radius=radius, origin=cfg.mode)
        except DslError:
            continue
        if cfg.alloc_extra:
            kind.birth_alloc = min(kind.fed + cfg.alloc_extra, kind.fel)
        catalog.append(kind)
        eel.invented_this_epoch += 1
        return kind
    raise GenerationExhausted(f"no admissible program for index {index} after {cfg.max_attempts} attempts")


def allocate(eel: EEL, world: "World") -> list[tuple]:
    """Hand out this step's energy in ascending instance-id order.

    Returns ``(iid, intake, outcome)`` per instance. Survivors receive their
    intake into their buffer; starved and over-limit instances receive
    nothing and are marked for death.
    """
    ledger = world.ledger
    bal = ledger.balances
    alloc = eel.alloc
    kinds = world.catalog.kinds
    doomed = world.doomed
    out = []
    fast = ledger.on_transfer is None
    pool = bal[POOL]
    for iid, inst in world.instances.items():
        kind = kinds[inst.kind]
        intake = alloc.get(iid, 0)
        if intake > pool:
            intake = pool
        if intake < kind.fed:
            doomed[iid] = STARVED
            out.append((iid, intake, STARVED))
        elif intake > kind.fel:
            doomed[iid] = OVER_LIMIT
            out.append((iid, intake, OVER_LIMIT))
        else:
            if fast:
                bal[("buffer", iid)] += intake
            else:
                ledger.transfer(POOL, buffer(iid), intake)
            pool -= intake
            out.append((iid, intake, "Persist" if intake == kind.fed else "Surplus"))
        inst.intake = intake
    if fast:
        bal[POOL] = pool
    return out


def free_energy(world: "World") -> int:
    return world.ledger.free_pool


__all__ = [
    "EEL", "GeneratorConfig", "HttpProvider", "Provider", "GenerationExhausted", "ProviderUnavailable",
    "InventionBudgetExhausted", "allocate", "free_energy", "generate_program", "invent_structure",
    "niche_of", "niche_request", "ALLOC", "STARVED", "OVER_LIMIT", "PROVIDER_ENV",
]
