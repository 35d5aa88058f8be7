"""The world: structures, enerstatic loops, channels, windows and the timestep.

One call to :func:`step_world` runs six phases in a fixed order:

1. inflow and external drivers, environment relaxation, allocation
2. causal execution (each surviving instance pays its demand, then runs)
3. effect application with perturbation billing, then energy channels
4. death of starved and over-limit instances
5. window classification, learning, at most one action per loop, invention
6. conservation audit
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional

from . import learning as L
from .dsl import ast as A
from .dsl.costs import CostTable
from .eel import EEL, allocate, invent_structure, InventionBudgetExhausted, GenerationExhausted
from .energy import (
    OUTSIDE, POOL, ConservationViolation, InsufficientBalance, Ledger, PerturbationModel, Property,
    affordable_value, buffer, energy_delta, mass_of, move_cost, trapped,
)
from .kinds import ALLOC, Catalog, PropSpec, StructureKind, make_kind

EVENT_KINDS = (
    "Transfer", "Assemble", "Disassemble", "Death", "WindowTransition", "Discovery", "DivZero",
    "ChannelFlow", "Perturbation", "Action", "PolicyUpdate", "Invention",
)
LOG_VERSION = 1

CLOSED = "closed"
OPEN = "open"

_LOOP_REF = re.compile(r"^loop(?P<id>[A-Za-z0-9_\-]+)\.energy$")
_INST_REF = re.compile(r"^inst(?P<iid>\d+)\.(?P<name>[A-Za-z_]\w*)$")
_ENV_REF = re.compile(r"^env\.(?P<name>[A-Za-z_]\w*)$")


class UnknownKind(LookupError):
    pass


class UnknownInstance(LookupError):
    pass


class UnknownLoop(LookupError):
    pass


class DensityTooLow(RuntimeError):
    pass


class EmptyLoop(ValueError):
    pass


@dataclass
class Event:
    step: int
    kind: str
    payload: dict

    def to_record(self) -> dict:
        rec = {"v": LOG_VERSION, "step": self.step, "event": self.kind}
        rec.update(self.payload)
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))


@dataclass(slots=True)
class StructureInstance:
    iid: int
    kind: int
    pos: tuple
    loop: Optional[str]
    props: dict
    born: int
    intake: int = 0


@dataclass
class EnerstaticLoop:
    id: str
    setpoint: int
    r_stasis: int
    r_action: int
    r_cap: int
    members: set = field(default_factory=set)
    energy: int = 0
    policy: Optional[L.ActionPolicy] = None
    learning: bool = True
    trace: L.ActionTrace = field(default_factory=L.ActionTrace)
    window: str = L.STASIS
    alive: bool = True
    center: tuple = (0, 0)
    extent: int = 2
    density_threshold: int = 0

    def __post_init__(self):
        if not 0 <= self.r_stasis < self.r_action < self.r_cap:
            raise ValueError(f"loop {self.id}: windows must satisfy 0 <= stasis < action < cap")
        self.sync()

    def sync(self) -> None:
        """Refresh the cached member buffer accounts (ascending id) after membership changes."""
        self.accounts = tuple(buffer(m) for m in sorted(self.members))

    def energy_in(self, balances: dict) -> int:
        accts = self.accounts
        if len(accts) == 1:
            return balances[accts[0]]
        return sum([balances[a] for a in accts])


@dataclass(frozen=True)
class EnergyChannel:
    origin: str
    target: str
    gain: Fraction
    cap: int

    def __post_init__(self):
        object.__setattr__(self, "gain", Fraction(self.gain))
        if self.cap < 0:
            raise ValueError("channel cap must be >= 0")


def classify(energy: int, setpoint: int, r_stasis: int, r_action: int, r_cap: int) -> str:
    d = abs(energy - setpoint)
    if d <= r_stasis:
        return L.STASIS
    if d <= r_action:
        return L.ACTION
    if d <= r_cap:
        return L.CAP
    return L.FATAL


def classify_window(loop: EnerstaticLoop) -> str:
    return classify(loop.energy, loop.setpoint, loop.r_stasis, loop.r_action, loop.r_cap)


def channel_amount(gain: Fraction, cap: int, origin_energy: int, origin_setpoint: int,
                   origin_available: int, target_available: int) -> int:
    """Signed flow origin -> target; negative draws from the target."""
    if not isinstance(gain, Fraction):
        gain = Fraction(gain)
    x = gain.numerator * (origin_energy - origin_setpoint)
    t = x // gain.denominator if x >= 0 else -(-x // gain.denominator)  # toward zero
    t = max(-cap, min(cap, t))
    if t > 0:
        return min(t, origin_available)
    return -min(-t, target_available)


def step_minimal_loop(energy: int, effector_rate: int) -> int:
    if effector_rate < 0:
        raise ValueError("effector_rate must be >= 0")
    if energy == 0:
        return 0
    step = min(abs(energy), effector_rate)
    return energy - step if energy > 0 else energy + step


def loop_window_bounds(members: Iterable[StructureKind]) -> tuple[int, int]:
    members = list(members)
    if not members:
        raise EmptyLoop("a loop needs at least one member")
    return sum(k.fed for k in members), sum(k.fel for k in members)


def _acct(a) -> str:
    if a == POOL or a == OUTSIDE:
        return a
    return f"{a[0]}:{a[1]}"


def _chebyshev(p: tuple, q: tuple) -> int:
    return max(abs(p[0] - q[0]), abs(p[1] - q[1]))


@dataclass
class Schedule:
    """An external driver: add ``delta`` to ``prop`` or set it to a pattern value."""

    prop: str
    delta: int = 0
    at: Optional[int] = None
    every: Optional[int] = None
    start: int = 0
    until: Optional[int] = None
    pattern: Optional[list] = None
    random_loop: bool = False
    delta_range: Optional[tuple] = None

    def due(self, step: int) -> bool:
        if self.at is not None:
            return step == self.at
        if step < self.start or (self.until is not None and step > self.until):
            return False
        if self.pattern is not None:
            return True
        return self.every is not None and (step - self.start) % self.every == 0


class World:
    """A single-writer simulation world. Build it, then call :func:`step_world`."""

    def __init__(self, total_energy: int, seed: int, *, table: Optional[CostTable] = None,
                 mode: str = CLOSED, inflow: int = 0, c_squared: int = 1,
                 log_exclude: Iterable[str] = (), strict_audit: bool = False):
        if mode not in (CLOSED, OPEN):
            raise ValueError(f"unknown mode {mode!r}")
        self.seed = seed
        self.rng = random.Random(seed)
        self.driver_rng = random.Random(f"drivers:{seed}")
        self.table = table or CostTable()
        self.mode = mode
        self.inflow = inflow
        self.c_squared = c_squared
        self.ledger = Ledger(total_energy)
        self.catalog = Catalog()
        self.env: dict[str, Property] = {}
        self.env_decay: dict[str, int] = {}
        self.eel = EEL(self.catalog, (), self.table)
        self.instances: dict[int, StructureInstance] = {}
        self.by_kind: dict[int, list] = {}
        self.loops: dict[str, EnerstaticLoop] = {}
        self.channels: list[EnergyChannel] = []
        self.schedules: list[Schedule] = []
        self.disabled_loops: set = set()
        self.controller_loops: tuple = ()
        self.step = 0
        self.next_iid = 0
        self.doomed: dict[int, str] = {}
        self._loop_energy: dict = {}
        self._getters: dict = {}
        self._channel_plan: Optional[list] = None
        self.events: list[Event] = []
        self.sink: Optional[Callable[[Event], None]] = None
        self.strict_audit = strict_audit
        self.log_exclude = set(log_exclude)
        self._log_perturbation = "Perturbation" not in self.log_exclude
        if "Transfer" not in self.log_exclude:
            self.ledger.on_transfer = self._log_transfer

    # construction ----------------------------------------------------------

    @property
    def alloc(self) -> dict:
        return self.eel.alloc

    def add_env(self, name: str, default: int = 0, value: Optional[int] = None,
                perturbation: PerturbationModel = PerturbationModel(), decay: int = 0) -> Property:
        if self.catalog.kinds:
            raise ValueError("environment properties must be declared before any kind")
        if name == ALLOC:
            raise ValueError(f"{ALLOC} is reserved")
        prop = Property(name, default, default, perturbation, "env")
        self.env[name] = prop
        self.ledger.open(trapped(f"env.{name}"))
        self.eel.env_props = tuple(self.env)
        if decay:
            self.env_decay[name] = decay
        if value is not None and value != default:
            self._move_prop(prop, value, POOL, trapped(f"env.{name}"))
        return prop

    def define_kind(self, name: str, program, props: Optional[dict] = None, radius: int = 1,
                    birth_alloc: Optional[int] = None, source_name: Optional[str] = None) -> StructureKind:
        kind = make_kind(len(self.catalog), name, program, self.catalog, tuple(self.env), self.table,
                         props=props, radius=radius, birth_alloc=birth_alloc, source_name=source_name)
        self.catalog.append(kind)
        return kind

    def add_loop(self, loop: EnerstaticLoop) -> EnerstaticLoop:
        if loop.id in self.loops:
            raise ValueError(f"duplicate loop id {loop.id!r}")
        loop.sync()
        self.loops[loop.id] = loop
        return loop

    def add_channel(self, origin: str, target: str, gain, cap: int) -> EnergyChannel:
        for lid in (origin, target):
            if lid not in self.loops:
                raise UnknownLoop(lid)
        if origin == target:
            raise ValueError(f"channel from loop {origin!r} to itself")
        ch = EnergyChannel(origin, target, Fraction(gain), cap)
        self.channels.append(ch)
        return ch

    def spawn(self, kind: int, pos: tuple = (0, 0), loop: Optional[str] = None, buffer_energy: int = 0,
              alloc: Optional[int] = None) -> int:
        """Place an instance paid for from the free pool (scenario setup and EEL builds)."""
        k = self._kind(kind)
        cost = k.assembly_cost + k.default_energy
        if self.ledger.free_pool < cost + buffer_energy:
            raise InsufficientBalance(f"pool holds {self.ledger.free_pool}, needs {cost + buffer_energy}")
        if loop is not None and loop not in self.loops:
            raise UnknownLoop(loop)
        iid = self._create(k, tuple(pos), loop, alloc)
        self.ledger.transfer(POOL, trapped(iid), cost)
        self.ledger.transfer(POOL, buffer(iid), buffer_energy)
        self._announce(iid, k, cost)
        return iid

    # queries ---------------------------------------------------------------

    def loop_energy(self, loop: EnerstaticLoop) -> int:
        bal = self.ledger.balances
        return loop.energy_in(bal)

    def observe(self, ref: str) -> int:
        m = _LOOP_REF.match(ref)
        if m:
            return self.loop_energy(self._loop(m["id"]))
        m = _ENV_REF.match(ref)
        if m:
            if m["name"] not in self.env:
                raise KeyError(ref)
            return self.env[m["name"]].value
        m = _INST_REF.match(ref)
        if m:
            inst = self._instance(int(m["iid"]))
            if m["name"] in ("x", "y"):
                return inst.pos[0 if m["name"] == "x" else 1]
            return inst.props[m["name"]]
        raise KeyError(f"cannot observe {ref!r}")

    def copy_numbers(self) -> dict:
        return {k: len(v) for k, v in self.by_kind.items() if v}

    def snapshot(self) -> dict:
        return {
            "step": self.step,
            "total": self.ledger.total,
            "balances": sorted([_acct(a), v] for a, v in self.ledger.balances.items()),
            "env": {n: p.value for n, p in sorted(self.env.items())},
            "alloc": sorted([i, v] for i, v in self.alloc.items()),
            "instances": [[i.iid, i.kind, list(i.pos), i.loop, sorted(i.props.items())]
                          for i in self.instances.values()],
            "loops": [[l.id, l.alive, l.window, [str(w) for w in l.policy.weights] if l.policy else None]
                      for l in self.loops.values()],
            "catalog": [[k.name, k.fed, k.fel, k.source] for k in self.catalog],
            "rng": hashlib.sha256(repr(self.rng.getstate()).encode()).hexdigest(),
        }

    def checksum(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # events ----------------------------------------------------------------

    def emit(self, kind: str, **payload) -> None:
        if kind in self.log_exclude:
            return
        ev = Event(self.step, kind, payload)
        self.events.append(ev)
        if self.sink is not None:
            self.sink(ev)

    def _log_transfer(self, src, dst, amount) -> None:
        self.emit("Transfer", src=_acct(src), dst=_acct(dst), amount=amount)

    # internals -------------------------------------------------------------

    def _kind(self, index: int) -> StructureKind:
        if not 0 <= index < len(self.catalog):
            raise UnknownKind(index)
        return self.catalog[index]

    def _instance(self, iid: int) -> StructureInstance:
        try:
            return self.instances[iid]
        except KeyError:
            raise UnknownInstance(iid) from None

    def _loop(self, lid: str) -> EnerstaticLoop:
        try:
            return self.loops[lid]
        except KeyError:
            raise UnknownLoop(lid) from None

    def _create(self, k: StructureKind, pos: tuple, loop: Optional[str], alloc: Optional[int]) -> int:
        iid = self.next_iid
        self.next_iid += 1
        self.ledger.open(trapped(iid))
        self.ledger.open(buffer(iid))
        self.instances[iid] = StructureInstance(iid, k.index, pos, loop,
                                                {n: p.default for n, p in k.props.items()}, self.step)
        self.by_kind.setdefault(k.index, []).append(iid)
        self.alloc[iid] = k.birth_alloc if alloc is None else alloc
        self._getters[iid] = self._bind(self.instances[iid], k)
        if loop is not None:
            self.loops[loop].members.add(iid)
            self.loops[loop].sync()
        return iid

    def _announce(self, iid: int, k: StructureKind, cost: int) -> None:
        inst = self.instances[iid]
        self.emit("Assemble", iid=iid, kind_index=k.index, loop=inst.loop, pos=list(inst.pos), cost=cost)
        if k.index not in self.catalog.discovery_steps:
            self.catalog.discovery_steps[k.index] = self.step
            self.emit("Discovery", kind_index=k.index, iid=iid)

    def _remove(self, iid: int, dst) -> int:
        """Drop an instance, sending its trapped and buffered energy to ``dst``."""
        inst = self.instances.pop(iid)
        del self._getters[iid]
        self.by_kind[inst.kind].remove(iid)
        self.alloc.pop(iid, None)
        if inst.loop is not None:
            self.loops[inst.loop].members.discard(iid)
            self.loops[inst.loop].sync()
        bal = self.ledger.balances
        refund = bal[trapped(iid)]
        held = bal[buffer(iid)]
        if callable(dst):
            dst = dst(inst)
        self.ledger.transfer(trapped(iid), dst, refund)
        self.ledger.transfer(buffer(iid), dst, held)
        self.ledger.close(trapped(iid))
        self.ledger.close(buffer(iid))
        return refund

    def _hub(self, loop: EnerstaticLoop):
        return loop.accounts[0] if loop.accounts else None

    def _withdraw(self, loop: EnerstaticLoop, amount: int, dst) -> None:
        bal = self.ledger.balances
        remaining = amount
        for acct in loop.accounts:
            if remaining == 0:
                break
            take = min(bal[acct], remaining)
            self.ledger.transfer(acct, dst, take)
            remaining -= take
        if remaining:
            raise InsufficientBalance(f"loop {loop.id} short by {remaining} uE")

    def _kill(self, iid: int, cause: str) -> None:
        inst = self.instances[iid]
        refund = self._remove(iid, POOL)
        self.emit("Death", iid=iid, kind_index=inst.kind, loop=inst.loop, cause=cause, refund=refund)

    def _move_prop(self, prop: Property, new: int, payer, owner) -> int:
        """Set ``prop`` toward ``new`` as far as ``payer`` can afford; returns energy paid."""
        delta = energy_delta(prop, new)
        if delta > 0:
            new = affordable_value(prop, new, self.ledger.balances[payer])
            delta = energy_delta(prop, new)
            self.ledger.transfer(payer, owner, delta)
        elif delta < 0:
            self.ledger.transfer(owner, payer, -delta)
        prop.value = new
        return delta

    def _dissipate(self, src, amount: int) -> None:
        if self.mode == OPEN:
            self.ledger.outflow(src, amount)
        else:
            self.ledger.transfer(src, POOL, amount)

    def _resolve(self, inst: StructureInstance, kind_index: int) -> Optional[StructureInstance]:
        """Nearest live instance of a kind within ``inst``'s effective radius."""
        r = self.catalog.kinds[inst.kind].radius
        x, y = inst.pos
        best, best_d = None, None
        instances = self.instances
        for j in self.by_kind.get(kind_index, ()):
            o = instances[j]
            d = max(abs(o.pos[0] - x), abs(o.pos[1] - y))
            if d <= r and (best_d is None or d < best_d):
                best, best_d = o, d
        return best

    def _getter(self, inst: StructureInstance, kind: StructureKind, ref: A.PropRef) -> Callable[[], int]:
        scope, name, iid = ref.scope, ref.name, inst.iid
        if scope == "env":
            if name in self.env:
                prop = self.env[name]
                return lambda: prop.value
            if name == ALLOC:
                alloc = self.alloc
                return lambda: alloc.get(iid, 0)
            if name == "fed_self":
                return lambda: kind.fed
            if name == "fel_self":
                return lambda: kind.fel
            if name == "buffer_self":
                bal, acct = self.ledger.balances, buffer(iid)
                return lambda: bal[acct]
            if name == "loop_energy_self":
                energies, lid = self._loop_energy, inst.loop
                return lambda: energies.get(lid, 0)
            if name == "loop_setpoint_self":
                loop = self.loops.get(inst.loop) if inst.loop is not None else None
                return (lambda: loop.setpoint) if loop is not None else (lambda: 0)
            if name == "step":
                return lambda: self.step
            raise KeyError(ref)
        if scope == "self":
            if name in ("x", "y"):
                axis = 0 if name == "x" else 1
                return lambda: inst.pos[axis]
            props = inst.props
            return lambda: props[name]
        j = ref.index
        default = self.catalog.kinds[j].props[name].default
        resolve = self._resolve

        def other():
            o = resolve(inst, j)
            return default if o is None else o.props[name]
        return other

    def _bind(self, inst: StructureInstance, kind: StructureKind) -> list:
        """One getter per sensed slot of the kind's compiled program."""
        return [self._getter(inst, kind, r) for r in kind.compiled.slots]

    def _apply_write(self, inst: StructureInstance, kind: StructureKind, ref: A.PropRef, value: int) -> None:
        iid = inst.iid
        scope, name = ref.scope, ref.name
        payer = buffer(iid)
        if scope == "env":
            if name == ALLOC:
                self.alloc[iid] = max(0, value)
                return
            prop = self.env[name]
            owner = trapped(f"env.{name}")
            target, owner_kind, holder = f"env.{name}", None, None
        elif scope == "self" and name in ("x", "y"):
            self._move_instance(inst, kind, value, axis=0 if name == "x" else 1)
            return
        else:
            holder = inst if scope == "self" else self._resolve(inst, ref.index)
            if holder is None:
                return
            spec: PropSpec = self.catalog.kinds[holder.kind].props[name]
            prop = Property(name, holder.props[name], spec.default, spec.perturbation, holder.iid)
            owner = trapped(holder.iid)
            target, owner_kind = f"inst{holder.iid}.{name}", holder.kind
        old = prop.value
        paid = self._move_prop(prop, value, payer, owner)
        if holder is not None:
            holder.props[name] = prop.value
        if prop.value != old and self._log_perturbation:
            self.emit("Perturbation", source="structure", writer=iid, writer_kind=inst.kind,
                      target=target, owner_kind=owner_kind, old=old, new=prop.value, energy=paid)

    def _move_instance(self, inst: StructureInstance, kind: StructureKind, value: int, axis: int) -> None:
        """Move along one axis as far toward ``value`` as the buffer can pay for."""
        old = inst.pos[axis]
        want = value - old
        if want == 0:
            return
        mass = mass_of(kind.assembly_cost, self.c_squared)
        acct = ("buffer", inst.iid)
        budget = self.ledger.balances[acct]
        # ceil(m*d*d/2) <= budget  <=>  m*d*d <= 2*budget
        dist = min(abs(want), math.isqrt(2 * budget // mass))
        if dist == 0:
            return
        cost = move_cost(mass, dist)
        self._dissipate(acct, cost)
        new = old + dist if want > 0 else old - dist
        inst.pos = (new, inst.pos[1]) if axis == 0 else (inst.pos[0], new)
        if self._log_perturbation:
            self.emit("Perturbation", source="structure", writer=inst.iid, writer_kind=inst.kind,
                      target=f"inst{inst.iid}.{'xy'[axis]}", owner_kind=inst.kind, old=old, new=new, energy=cost)

    # operations ------------------------------------------------------------

    def assemble(self, loop_id: str, kind: int) -> int:
        """Build an instance paid for out of a loop's member buffers."""
        loop = self._loop(loop_id)
        k = self._kind(kind)
        cost = k.assembly_cost + k.default_energy
        energy = self.loop_energy(loop)
        if energy < cost:
            raise InsufficientBalance(f"loop {loop.id} holds {energy} uE, assembly needs {cost}")
        if loop.density_threshold and energy < loop.density_threshold * max(1, len(loop.members)):
            raise DensityTooLow(f"loop {loop.id}: {energy} uE over {len(loop.members)} members")
        cx, cy = loop.center
        e = loop.extent
        pos = (cx + self.rng.randint(-e, e), cy + self.rng.randint(-e, e))
        payers = sorted(loop.members)
        iid = self._create(k, pos, loop.id, None)
        remaining = cost
        bal = self.ledger.balances
        for m in payers:
            take = min(bal[("buffer", m)], remaining)
            self.ledger.transfer(buffer(m), trapped(iid), take)
            remaining -= take
        self._announce(iid, k, cost)
        return iid

    def disassemble(self, iid: int) -> int:
        """Take an instance apart, refunding trapped energy to its loop (or the pool)."""
        inst = self._instance(iid)

        def owner_account(i: StructureInstance):
            loop = self.loops.get(i.loop) if i.loop is not None else None
            if loop is not None and loop.alive and loop.members:
                return self._hub(loop)
            return POOL
        refund = self._remove(iid, owner_account)
        self.emit("Disassemble", iid=iid, kind_index=inst.kind, loop=inst.loop, refund=refund)
        return refund

    def apply_channel(self, ch: EnergyChannel) -> int:
        origin, target = self.loops[ch.origin], self.loops[ch.target]
        if not (origin.alive and target.alive and origin.members and target.members):
            return 0
        oe, te = self.loop_energy(origin), self.loop_energy(target)
        t = channel_amount(ch.gain, ch.cap, oe, origin.setpoint, oe, te)
        if t > 0:
            self._withdraw(origin, t, self._hub(target))
        elif t < 0:
            self._withdraw(target, -t, self._hub(origin))
        if t and "ChannelFlow" not in self.log_exclude:
            self.emit("ChannelFlow", origin=ch.origin, target=ch.target, amount=t)
        return t

    def _run_channels(self) -> None:
        """Apply every channel in declaration order against a running energy table.

        Same arithmetic as :func:`channel_amount`, inlined because this runs
        for every channel on every step.
        """
        bal = self.ledger.balances
        if self._channel_plan is None or self._channel_plan[0] != len(self.channels):
            order = {lid: i for i, lid in enumerate(self.loops)}
            self._channel_plan = (len(self.channels), list(self.loops.values()), [
                (order[c.origin], order[c.target], self.loops[c.origin].setpoint, c.gain.numerator,
                 c.gain.denominator, c.cap) for c in self.channels])
        _, loops, plan = self._channel_plan
        # -1 marks a loop that cannot take part (dead or empty)
        energies = [lp.energy_in(bal) if lp.alive and lp.accounts else -1 for lp in loops]
        log = "ChannelFlow" not in self.log_exclude
        fast = self.ledger.on_transfer is None
        for o, tg, sp, num, den, cap in plan:
            oe = energies[o]
            te = energies[tg]
            if oe < 0 or te < 0:
                continue
            x = num * (oe - sp)
            if x >= 0:
                t = x // den
                if t == 0:
                    continue
                if t > cap:
                    t = cap
                if t > oe:
                    t = oe
                src, dst, amount = loops[o], loops[tg], t
            else:
                t = -(-x // den)
                if t < -cap:
                    t = -cap
                if -t > te:
                    t = -te
                src, dst, amount = loops[tg], loops[o], -t
            if amount == 0:
                continue
            hub = dst.accounts[0]
            if fast and len(src.accounts) == 1:
                bal[src.accounts[0]] -= amount
                bal[hub] += amount
            else:
                self._withdraw(src, amount, hub)
            energies[o] = oe - t
            energies[tg] = te + t
            if log:
                self.emit("ChannelFlow", origin=src.id if t > 0 else dst.id,
                          target=dst.id if t > 0 else src.id, amount=t)

    def perturb(self, ref: str, delta: int) -> int:
        """Inject an external disturbance; energy comes from (or returns to) the pool."""
        if delta == 0:
            return 0
        m = _LOOP_REF.match(ref)
        if m:
            loop = self._loop(m["id"])
            if not loop.alive or not loop.members:
                applied = 0
            elif delta > 0:
                applied = min(delta, self.ledger.free_pool)
                self.ledger.transfer(POOL, self._hub(loop), applied)
            else:
                applied = -min(-delta, self.loop_energy(loop))
                self._withdraw(loop, -applied, POOL)
            self.emit("Perturbation", source="external", target=ref, delta=delta, applied=applied,
                      energy=applied)
            return applied
        m = _ENV_REF.match(ref)
        if m:
            name = m["name"]
            if name not in self.env:
                raise KeyError(ref)
            prop, owner = self.env[name], trapped(f"env.{name}")
        else:
            m = _INST_REF.match(ref)
            if not m:
                raise KeyError(f"cannot perturb {ref!r}")
            holder = self._instance(int(m["iid"]))
            spec = self.catalog.kinds[holder.kind].props[m["name"]]
            prop = Property(m["name"], holder.props[m["name"]], spec.default, spec.perturbation, holder.iid)
            owner = trapped(holder.iid)
        old = prop.value
        paid = self._move_prop(prop, old + delta, POOL, owner)
        if owner[1] != f"env.{prop.name}":
            holder.props[prop.name] = prop.value
        applied = prop.value - old
        self.emit("Perturbation", source="external", target=ref, delta=delta, applied=applied, energy=paid)
        return applied

    def set_value(self, ref: str, value: int) -> int:
        return self.perturb(ref, value - self.observe(ref))

    # stepping --------------------------------------------------------------

    def _drivers(self, s: int) -> None:
        for sch in self.schedules:
            if not sch.due(s):
                continue
            if sch.pattern is not None:
                self.set_value(sch.prop, sch.pattern[(s - sch.start) % len(sch.pattern)])
                continue
            prop, delta = sch.prop, sch.delta
            if sch.random_loop:
                live = [l for l in self.loops.values() if l.alive]
                if not live:
                    continue
                prop = f"loop{self.driver_rng.choice(live).id}.energy"
            if sch.delta_range is not None:
                delta = self.driver_rng.randint(*sch.delta_range)
            self.perturb(prop, delta)

    def _relax_env(self) -> None:
        for name, rate in self.env_decay.items():
            prop = self.env[name]
            gap = prop.default - prop.value
            if gap:
                step = max(-rate, min(rate, gap))
                self._move_prop(prop, prop.value + step, POOL, trapped(f"env.{name}"))

    def _audit(self) -> None:
        self.ledger.audit()

    def _dissolve(self, loop: EnerstaticLoop, cause: str) -> None:
        for iid in sorted(loop.members):
            self._kill(iid, cause)
        loop.alive = False
        loop.trace.clear()

    def _act(self, loop: EnerstaticLoop, cls: str, energy: int, s: int) -> None:
        idx = L.select_action(loop.policy, cls, self.rng)
        action = loop.policy.actions[idx]
        outcome, iid = "ok", None
        try:
            if action.op == L.ASSEMBLE:
                iid = self.assemble(loop.id, action.kind)
            elif action.op == L.DISASSEMBLE_OLDEST:
                mine = [m for m in sorted(loop.members) if self.instances[m].kind == action.kind]
                if mine:
                    iid = mine[0]
                    self.disassemble(iid)
                else:
                    outcome = "none"
        except (InsufficientBalance, DensityTooLow) as exc:
            outcome = type(exc).__name__
        if cls == L.ACTION:
            loop.trace.record(s, idx, energy)
        if "Action" not in self.log_exclude:
            self.emit("Action", loop=loop.id, window=cls, action=str(action), index=idx,
                      outcome=outcome, iid=iid, energy=energy)

    def _loops_phase(self, s: int) -> None:
        bal = self.ledger.balances
        for loop in self.loops.values():
            if not loop.alive:
                continue
            energy = loop.energy = loop.energy_in(bal)
            if loop.accounts:
                cls = classify(energy, loop.setpoint, loop.r_stasis, loop.r_action, loop.r_cap)
            else:
                cls = L.FATAL
            prev = loop.window
            if cls != prev:
                self.emit("WindowTransition", loop=loop.id, old=prev, new=cls, energy=energy)
                if prev == L.ACTION and cls in (L.STASIS, L.CAP):
                    self._credit(loop, L.REACHED_STASIS if cls == L.STASIS else L.REACHED_CAP)
                if cls == L.ACTION:
                    loop.trace.window_entered_at = s
                loop.window = cls
            if cls == L.FATAL:
                self._dissolve(loop, "LoopDissolved")
                continue
            if loop.policy is not None and cls in (L.ACTION, L.CAP) and loop.id not in self.disabled_loops:
                self._act(loop, cls, energy, s)

    def _credit(self, loop: EnerstaticLoop, outcome: str) -> None:
        if loop.policy is not None and loop.learning and loop.trace.entries:
            loop.policy = L.credit_update(loop.policy, loop.trace, outcome)
            self.emit("PolicyUpdate", loop=loop.id, outcome=outcome, trace=[e[1] for e in loop.trace.entries],
                      weights=[str(w) for w in loop.policy.weights])
        loop.trace.clear()

    def _eel_phase(self, s: int) -> None:
        eel = self.eel
        if eel.generator is None:
            return
        phase = s % eel.epoch
        if phase == 0:
            eel.invented_this_epoch = 0
        if phase < eel.invention_budget:
            try:
                kind = invent_structure(eel, self.catalog, self.rng)
            except (InventionBudgetExhausted, GenerationExhausted):
                kind = None
            if kind is not None:
                self.emit("Invention", kind_index=kind.index, fed=kind.fed, fel=kind.fel, source=kind.source)
                self._eel_build(kind)
        if phase == 0 and eel.production_budget and s > 0:
            for _ in range(eel.production_budget):
                live = sorted(k for k, v in self.by_kind.items() if v)
                if not live:
                    break
                k = self.rng.choices(live, [len(self.by_kind[k]) for k in live])[0]
                self._eel_build(self.catalog[k])

    def _eel_build(self, kind: StructureKind) -> Optional[int]:
        cost = kind.assembly_cost + kind.default_energy
        if self.ledger.free_pool < cost:
            return None
        pos = (self.rng.randint(-8, 8), self.rng.randint(-8, 8))
        return self.spawn(kind.index, pos)

    def run_step(self) -> list[Event]:
        """Advance one step; returns this step's events, including any emitted since the last step."""
        s = self.step
        events = self.events
        self.doomed = {}
        ledger = self.ledger
        bal = ledger.balances
        strict = self.strict_audit

        # 1. inflow, drivers, relaxation, allocation
        if self.mode == OPEN and self.inflow:
            ledger.inflow(self.inflow)
        if self.schedules:
            self._drivers(s)
        if self.env_decay:
            self._relax_env()
        allocate(self.eel, self)
        if strict:
            self._audit()

        # 2. causal execution
        kinds = self.catalog.kinds
        doomed = self.doomed
        running = [inst for iid, inst in self.instances.items() if iid not in doomed]
        if ledger.on_transfer is None and self.mode == CLOSED:
            # same effect as one transfer per instance; buffers hold at least fed after allocation
            back = 0
            for inst in running:
                fed = kinds[inst.kind].fed
                bal[("buffer", inst.iid)] -= fed
                back += fed
            bal[POOL] += back
        else:
            for inst in running:
                self._dissipate(("buffer", inst.iid), kinds[inst.kind].fed)
        loop_energy = self._loop_energy
        loop_energy.clear()
        for lid, loop in self.loops.items():
            if loop.alive:
                loop_energy[lid] = loop.energy_in(bal)
        getters = self._getters
        effects = []
        log_div = "DivZero" not in self.log_exclude
        for inst in running:
            kind = kinds[inst.kind]
            writes, div_zero = kind.compiled.run(getters[inst.iid])
            if writes:
                effects.append((inst, kind, writes))
            if div_zero and log_div:
                self.emit("DivZero", iid=inst.iid, kind_index=inst.kind)
        if strict:
            self._audit()

        # 3. effects and channels
        disabled = self.disabled_loops
        alloc = self.alloc
        for inst, kind, writes in effects:
            if inst.loop is not None and inst.loop in disabled:
                continue
            for ref, value in writes:
                if ref.scope == "env" and ref.name == ALLOC:
                    alloc[inst.iid] = value if value > 0 else 0
                else:
                    self._apply_write(inst, kind, ref, value)
        if self.channels:
            self._run_channels()
        if strict:
            self._audit()

        # 4. deaths
        for iid in sorted(doomed):
            self._kill(iid, doomed[iid])
        if strict:
            self._audit()

        # 5. windows, learning, actions, invention
        self._loops_phase(s)
        self._eel_phase(s)

        # 6. audit
        self._audit()
        self.step = s + 1
        self.events = []
        return events


def step_world(world: World) -> tuple[World, list[Event]]:
    events = world.run_step()
    return world, events


def relationships(world: World) -> set[tuple[int, int]]:
    """Pairs of instances within each other's radius where at least one affects the other."""
    out = set()
    insts = list(world.instances.values())
    affects = {}
    for k in world.catalog:
        affects[k.index] = {r.index for mode, r, _ in A.refs(k.program) if mode == A.AFFECT and r.scope == A.STRUCT}
    for i, a in enumerate(insts):
        ra = world.catalog[a.kind].radius
        for b in insts[i + 1:]:
            d = _chebyshev(a.pos, b.pos)
            if d > ra or d > world.catalog[b.kind].radius:
                continue
            if b.kind in affects[a.kind] or a.kind in affects[b.kind]:
                out.add((a.iid, b.iid))
    return out
