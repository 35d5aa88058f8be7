"""Scenario files, world construction, runs and run bundles.

A scenario is a JSON document (``.scenario``) validated against
:data:`SCHEMA`. Structure programs live in sibling ``.cp`` files referenced
by relative path, or inline under ``program``.
"""

from __future__ import annotations

import copy
import json
import os
import random
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

import jsonschema

from . import learning as L
from .dsl.costs import CostTable
from .eel import GeneratorConfig
from .energy import ConservationViolation, PerturbationModel
from .kinds import PropSpec
from .metrics import complexity_report, metrics_series, write_metrics_csv
from .world import EnerstaticLoop, Schedule, World

SCENARIO_VERSION = 1
BUNDLED_DIR = Path(__file__).parent / "scenarios"

_INT = {"type": "integer"}
_NONNEG = {"type": "integer", "minimum": 0}
_RATIONAL = {"type": ["string", "integer"], "pattern": r"^-?\d+(/\d+)?$"}
_PERT = {
    "type": "object", "additionalProperties": False,
    "properties": {"shape": {"enum": ["linear", "quadratic"]}, "kappa": _NONNEG},
}
_PROPS = {
    "type": "object",
    "additionalProperties": {
        "type": "object", "additionalProperties": False,
        "properties": {"default": _INT, "shape": {"enum": ["linear", "quadratic"]}, "kappa": _NONNEG},
    },
}
_NAME_OR_NAMES = {"oneOf": [{"type": "string"}, {"type": "array", "items": {"type": "string"}, "minItems": 1}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["seed", "steps"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCENARIO_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": _INT,
        "steps": _NONNEG,
        "mode": {"enum": ["closed", "open"]},
        "total_energy": _NONNEG,
        "inflow": _NONNEG,
        "c_squared": {"type": "integer", "minimum": 1},
        "cost_table": {
            "type": "object", "additionalProperties": False,
            "properties": {"cost": {"type": "object", "additionalProperties": _INT},
                           "dissipation": {"type": "object", "additionalProperties": _INT}},
        },
        "env": {"type": "array", "items": {
            "type": "object", "required": ["name"], "additionalProperties": False,
            "properties": {"name": {"type": "string"}, "default": _INT, "value": _INT,
                           "perturbation": _PERT, "decay": _NONNEG},
        }},
        "kinds": {"type": "array", "items": {
            "type": "object", "required": ["name"], "additionalProperties": False,
            "oneOf": [{"required": ["source"]}, {"required": ["program"]}],
            "properties": {"name": {"type": "string"}, "source": {"type": "string"}, "program": {"type": "string"},
                           "props": _PROPS, "radius": _NONNEG, "birth_alloc": _NONNEG, "alloc_extra": _NONNEG},
        }},
        "loops": {"type": "array", "items": {
            "type": "object", "required": ["id", "setpoint", "windows"], "additionalProperties": False,
            "properties": {
                "id": {"type": "string"},
                "count": {"type": "integer", "minimum": 1},
                "setpoint": _INT,
                "windows": {"type": "array", "items": _NONNEG, "minItems": 3, "maxItems": 3},
                "center": {"type": "array", "items": _INT, "minItems": 2, "maxItems": 2},
                "spacing": _NONNEG,
                "extent": _NONNEG,
                "density_threshold": _NONNEG,
                "members": {"type": "array", "items": {
                    "type": "object", "required": ["kind"], "additionalProperties": False,
                    "properties": {"kind": _NAME_OR_NAMES, "count": _NONNEG, "buffer": _NONNEG, "alloc": _NONNEG},
                }},
                "policy": {
                    "type": "object", "required": ["actions"], "additionalProperties": False,
                    "properties": {
                        "actions": {"type": "array", "minItems": 1, "items": {
                            "type": "object", "required": ["op"], "additionalProperties": False,
                            "properties": {"op": {"enum": [L.ASSEMBLE, L.DISASSEMBLE_OLDEST, L.NOOP]},
                                           "kind": {"type": "string"}},
                        }},
                        "weights": {"type": "array", "items": _RATIONAL},
                        "eta": _RATIONAL,
                        "learning": {"type": "boolean"},
                    },
                },
            },
        }},
        "channels": {"type": "array", "items": {
            "type": "object", "required": ["origin", "target", "gain", "cap"], "additionalProperties": False,
            "properties": {"origin": {"type": "string"}, "target": {"type": "string"},
                           "gain": _RATIONAL, "cap": _NONNEG},
        }},
        "random_channels": {
            "type": "object", "required": ["per_loop", "gain", "cap"], "additionalProperties": False,
            "properties": {"per_loop": _NONNEG, "gain": _RATIONAL, "cap": _NONNEG},
        },
        "instances": {"type": "array", "items": {
            "type": "object", "required": ["kind"], "additionalProperties": False,
            "properties": {"kind": {"type": "string"}, "pos": {"type": "array", "items": _INT, "minItems": 2,
                                                                  "maxItems": 2},
                           "count": _NONNEG, "buffer": _NONNEG, "alloc": _NONNEG},
        }},
        "drivers": {"type": "array", "items": {
            "type": "object", "required": ["prop"], "additionalProperties": False,
            "properties": {"prop": {"type": "string"}, "delta": _INT, "at": _NONNEG, "every": {"type": "integer",
                                                                                              "minimum": 1},
                           "start": _NONNEG, "until": _NONNEG, "pattern": {"type": "array", "items": _INT,
                                                                           "minItems": 1},
                           "random_loop": {"type": "boolean"},
                           "delta_range": {"type": "array", "items": _INT, "minItems": 2, "maxItems": 2}},
        }},
        "tcv": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "controller_loops": {"type": "array", "items": {"type": "string"}},
                "variables": {"type": "array", "items": {"type": "string"}},
                "disturbance": {"type": "object", "additionalProperties": False,
                                "properties": {"shape": {"enum": ["square", "sine", "constant"]},
                                               "amplitude": _INT, "period": {"type": "integer", "minimum": 1},
                                               "noise": _NONNEG}},
                "theta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
                "steps": {"type": "integer", "minimum": 2},
                "trials": {"type": "integer", "minimum": 1},
            },
        },
        "generator": {
            "type": "object", "additionalProperties": False,
            "properties": {"mode": {"enum": ["grammar", "external"]}, "max_nodes": {"type": "integer", "minimum": 2},
                           "max_statements": {"type": "integer", "minimum": 1}, "max_props": _NONNEG,
                           "literal_range": {"type": "array", "items": _INT, "minItems": 2, "maxItems": 2},
                           "radius_range": {"type": "array", "items": _NONNEG, "minItems": 2, "maxItems": 2},
                           "kind_mix": {"type": "object", "additionalProperties": _NONNEG},
                           "stray_ref_rate": {"type": "number", "minimum": 0, "maximum": 1},
                           "alloc_extra": _NONNEG,
                           "max_attempts": {"type": "integer", "minimum": 1},
                           "provider_url": {"type": "string"}, "timeout": {"type": "number", "exclusiveMinimum": 0},
                           "invention_budget": _NONNEG, "production_budget": _NONNEG,
                           "epoch": {"type": "integer", "minimum": 1}},
        },
        "log": {"type": "object", "additionalProperties": False,
                "properties": {"exclude": {"type": "array", "items": {"type": "string"}}}},
        "metrics": {"type": "object", "additionalProperties": False,
                    "properties": {"window": {"type": "integer", "minimum": 1}}},
    },
}


class SchemaError(ValueError):
    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class MissingFile(FileNotFoundError):
    pass


@dataclass
class Scenario:
    data: dict
    base: Path
    path: Optional[Path] = None

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def steps(self) -> int:
        return self.data["steps"]

    def with_overrides(self, seed: Optional[int] = None, steps: Optional[int] = None) -> "Scenario":
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["seed"] = seed
        if steps is not None:
            data["steps"] = steps
        return Scenario(data, self.base, self.path)

    def inlined(self) -> dict:
        """The scenario with every ``.cp`` source pasted in, so it stands alone."""
        data = copy.deepcopy(self.data)
        for k in data.get("kinds", []):
            if "source" in k:
                k["program"] = _read_source(self.base, k.pop("source"))
        return data


def _read_source(base: Path, rel: str) -> str:
    path = base / rel
    try:
        return path.read_text()
    except FileNotFoundError:
        raise MissingFile(f"{path}: program source not found") from None


def bundled(name: str) -> Path:
    """Path of a bundled scenario, e.g. ``bundled("men")``."""
    path = BUNDLED_DIR / (name if name.endswith(".scenario") else f"{name}.scenario")
    if not path.exists():
        raise MissingFile(f"no bundled scenario {name!r}")
    return path


def scenario_from_dict(data: dict, base: Path = Path("."), path: Optional[Path] = None) -> Scenario:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        prefix = f"{path}:" if path else ""
        raise SchemaError(e.message, f"{prefix}{where}")
    scn = Scenario(data, Path(base), path)
    build_world(scn)  # parse and niche-check everything now rather than mid-run
    return scn


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"{path}: no such scenario")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})", str(path)) from None
    return scenario_from_dict(data, path.parent, path)


def _perturbation(spec: Optional[dict]) -> PerturbationModel:
    spec = spec or {}
    return PerturbationModel(spec.get("shape", "linear"), spec.get("kappa", 1))


def _kind_index(world: World, name: str, where: str) -> int:
    try:
        return world.catalog.by_name(name).index
    except KeyError:
        raise SchemaError(f"unknown kind {name!r}", where) from None


def build_world(scn: Scenario, seed: Optional[int] = None) -> World:
    """Construct the initial world; setup events are reported with step 0."""
    d = scn.data
    seed = d["seed"] if seed is None else seed
    ct = d.get("cost_table", {})
    table = CostTable().with_overrides(ct.get("cost"), ct.get("dissipation")) if ct else CostTable()
    world = World(d.get("total_energy", 0), seed, table=table, mode=d.get("mode", "closed"),
                  inflow=d.get("inflow", 0), c_squared=d.get("c_squared", 1),
                  log_exclude=d.get("log", {}).get("exclude", ()))
    for e in d.get("env", []):
        world.add_env(e["name"], e.get("default", 0), e.get("value"), _perturbation(e.get("perturbation")),
                      e.get("decay", 0))
    for k in d.get("kinds", []):
        if "source" in k:
            text, label = _read_source(scn.base, k["source"]), str(scn.base / k["source"])
        else:
            text, label = k["program"], f"<{k['name']}>"
        props = {n: PropSpec(p.get("default", 0), _perturbation(p)) for n, p in k.get("props", {}).items()}
        kind = world.define_kind(k["name"], text, props=props, radius=k.get("radius", 1),
                                 birth_alloc=k.get("birth_alloc"), source_name=label)
        if "alloc_extra" in k:
            kind.birth_alloc = kind.fed + k["alloc_extra"]

    for li, spec in enumerate(d.get("loops", [])):
        count = spec.get("count", 1)
        for i in range(count):
            lid = spec["id"].format(i=i) if count > 1 else spec["id"]
            cx, cy = spec.get("center", [0, 0])
            sp = spec.get("spacing", 0)
            center = (cx + sp * (i % 6), cy + sp * (i // 6))
            loop = EnerstaticLoop(lid, spec["setpoint"], *spec["windows"], center=center,
                                  extent=spec.get("extent", 2), density_threshold=spec.get("density_threshold", 0))
            world.add_loop(loop)
            if "policy" in spec:
                pol = spec["policy"]
                actions = tuple(L.Action(a["op"], _kind_index(world, a["kind"], f"loops/{li}/policy")
                                         if "kind" in a else None) for a in pol["actions"])
                weights = tuple(Fraction(w) for w in pol.get("weights", [1] * len(actions)))
                total = sum(weights)
                loop.policy = L.ActionPolicy(actions, tuple(w / total for w in weights),
                                             Fraction(pol.get("eta", "1/10")))
                loop.learning = pol.get("learning", True)
            for m in spec.get("members", []):
                names = [m["kind"]] if isinstance(m["kind"], str) else m["kind"]
                kidx = _kind_index(world, names[i % len(names)], f"loops/{li}/members")
                for _ in range(m.get("count", 1)):
                    world.spawn(kidx, center, lid, m.get("buffer", 0), m.get("alloc"))

    for ii, spec in enumerate(d.get("instances", [])):
        kidx = _kind_index(world, spec["kind"], f"instances/{ii}")
        for _ in range(spec.get("count", 1)):
            world.spawn(kidx, tuple(spec.get("pos", [0, 0])), None, spec.get("buffer", 0), spec.get("alloc"))

    for ci, ch in enumerate(d.get("channels", [])):
        if ch["origin"] not in world.loops or ch["target"] not in world.loops:
            raise SchemaError("channel endpoints must be declared loops", f"channels/{ci}")
        world.add_channel(ch["origin"], ch["target"], Fraction(ch["gain"]), ch["cap"])
    rc = d.get("random_channels")
    if rc:
        crng = random.Random(f"channels:{seed}")
        ids = list(world.loops)
        for lid in ids:
            others = [x for x in ids if x != lid]
            for target in crng.sample(others, min(rc["per_loop"], len(others))):
                world.add_channel(lid, target, Fraction(rc["gain"]), rc["cap"])

    for dr in d.get("drivers", []):
        world.schedules.append(Schedule(
            prop=dr["prop"], delta=dr.get("delta", 0), at=dr.get("at"), every=dr.get("every"),
            start=dr.get("start", 0), until=dr.get("until"), pattern=dr.get("pattern"),
            random_loop=dr.get("random_loop", False),
            delta_range=tuple(dr["delta_range"]) if "delta_range" in dr else None))

    tc = d.get("tcv", {})
    for lid in tc.get("controller_loops", []):
        if lid not in world.loops:
            raise SchemaError(f"unknown controller loop {lid!r}", "tcv/controller_loops")
    world.controller_loops = tuple(tc.get("controller_loops", ()))

    g = d.get("generator")
    if g:
        gcfg = {k: v for k, v in g.items() if k not in ("invention_budget", "production_budget", "epoch")}
        for key in ("literal_range", "radius_range"):
            if key in gcfg:
                gcfg[key] = tuple(gcfg[key])
        world.eel.generator = GeneratorConfig(**gcfg)
        world.eel.invention_budget = g.get("invention_budget", 1)
        world.eel.production_budget = g.get("production_budget", 0)
        world.eel.epoch = g.get("epoch", 100)
    world.ledger.audit()
    return world


# runs ----------------------------------------------------------------------

EVENTS_FILE = "events.jsonl"
SCENARIO_FILE = "scenario.json"
METRICS_FILE = "metrics.csv"
COMPLEXITY_FILE = "complexity.jsonl"
BUNDLE_FILE = "bundle.json"
DUMP_FILE = "violation.json"

_METRIC_EVENTS = frozenset({"Assemble", "Disassemble", "Death"})


@dataclass
class RunBundle:
    out_dir: str
    scenario: str
    events: str
    metrics: str
    complexity: str
    checksum: str
    steps_run: int
    extinct: bool
    seed: int

    def save(self) -> None:
        """Write ``bundle.json``; file entries are stored as bare names so the directory can move."""
        data = asdict(self)
        for key in ("scenario", "events", "metrics", "complexity"):
            data[key] = Path(data[key]).name
        data["out_dir"] = "."
        with open(os.path.join(self.out_dir, BUNDLE_FILE), "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_bundle(path) -> RunBundle:
    path = Path(path)
    if path.is_dir():
        path = path / BUNDLE_FILE
    if not path.exists():
        raise MissingFile(f"{path}: no run bundle")
    data = json.loads(path.read_text())
    data["out_dir"] = str(path.parent)
    for key in ("scenario", "events", "metrics", "complexity"):
        data[key] = str(path.parent / Path(data[key]).name)
    return RunBundle(**data)


def read_events(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def run(scn: Scenario, out_dir, seed: Optional[int] = None, steps: Optional[int] = None,
        inject: Optional[tuple] = None) -> RunBundle:
    """Step a scenario to its limit (or extinction), writing the log as it goes.

    ``inject`` is an optional ``(step, ref, delta)`` external perturbation
    applied just before that step runs.
    """
    scn = scn.with_overrides(seed, steps)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = scn.inlined()
    with open(out / SCENARIO_FILE, "w") as fh:
        json.dump(snapshot, fh, indent=2, sort_keys=True)
        fh.write("\n")
    world = build_world(scn)
    window = scn.data.get("metrics", {}).get("window", 100)
    kept: list = []
    limit = scn.steps
    extinct = False
    with open(out / EVENTS_FILE, "w") as log:
        def sink_all(events):
            lines = []
            for ev in events:
                rec = ev.to_record()
                lines.append(json.dumps(rec, separators=(",", ":")))
                if ev.kind in _METRIC_EVENTS:
                    kept.append(rec)
            if lines:
                log.write("\n".join(lines) + "\n")

        for s in range(limit):
            if inject is not None and inject[0] == s:
                world.perturb(inject[1], inject[2])
            try:
                events = world.run_step()
            except ConservationViolation as exc:
                sink_all(world.events)
                log.flush()
                with open(out / DUMP_FILE, "w") as fh:
                    json.dump({"error": str(exc), "snapshot": world.snapshot()}, fh, indent=2, default=str)
                raise
            sink_all(events)
            if not world.instances:
                extinct = True
                break
    series = metrics_series(kept, window, world.step) if world.step else []
    write_metrics_csv(series, out / METRICS_FILE)
    with open(out / COMPLEXITY_FILE, "w") as fh:
        for idx, rec in complexity_report(world.catalog).items():
            fh.write(json.dumps({"v": 1, "report": "complexity", "kind_index": idx, **rec},
                                separators=(",", ":")) + "\n")
    bundle = RunBundle(str(out), str(out / SCENARIO_FILE), str(out / EVENTS_FILE), str(out / METRICS_FILE),
                       str(out / COMPLEXITY_FILE), world.checksum(), world.step, extinct, scn.seed)
    bundle.save()
    return bundle


def perturb(bundle_path, at: int, prop: str, delta: int, out_dir) -> RunBundle:
    """Replay a bundle's scenario, inject ``delta`` into ``prop`` before step ``at``, continue."""
    bundle = load_bundle(bundle_path)
    data = json.loads(Path(bundle.scenario).read_text())
    scn = scenario_from_dict(data, Path(bundle.out_dir))
    if not 0 <= at < scn.steps:
        raise ValueError(f"--at {at} outside the run's {scn.steps} steps")
    return run(scn, out_dir, inject=(at, prop, delta))
