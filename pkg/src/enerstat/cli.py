"""Command-line entry point: ``enerstat run|perturb|tcv|metrics|validate``.

Exit status is 0 on success, 1 on a domain error (bad scenario, DSL error,
conservation failure, ...) and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .dsl.parser import DslError
from .eel import ProviderUnavailable
from .energy import EnergyError
from .metrics import Disturbance, complexity_report, metrics_series, tcv, write_metrics_csv
from .scenario import (
    METRICS_FILE, MissingFile, SchemaError, build_world, load_bundle, load_scenario, perturb, read_events, run,
)
from .world import DensityTooLow, UnknownInstance, UnknownKind, UnknownLoop

DOMAIN_ERRORS = (SchemaError, MissingFile, DslError, EnergyError, ProviderUnavailable, UnknownInstance,
                 UnknownKind, UnknownLoop, DensityTooLow, KeyError, ValueError, OSError)


def _seed_range(text: str) -> range:
    try:
        a, b = text.split("..")
        lo, hi = int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b, got {text!r}") from None
    if hi < lo:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return range(lo, hi + 1)


def _run_one(args: tuple) -> dict:
    path, out, seed, steps = args
    b = run(load_scenario(path), out, seed=seed, steps=steps)
    return {"seed": b.seed, "out": b.out_dir, "steps": b.steps_run, "extinct": b.extinct, "checksum": b.checksum}


def cmd_run(ns) -> int:
    if ns.seeds is not None:
        base = Path(ns.out or "runs")
        jobs = [(ns.scenario, str(base / f"seed_{s}"), s, ns.steps) for s in ns.seeds]
        workers = ns.jobs or min(len(jobs), os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rec in pool.map(_run_one, jobs):
                print(json.dumps(rec, sort_keys=True))
        return 0
    scn = load_scenario(ns.scenario)
    out = ns.out or f"runs/{scn.data.get('name', Path(ns.scenario).stem)}"
    b = run(scn, out, seed=ns.seed, steps=ns.steps)
    print(json.dumps({"seed": b.seed, "out": b.out_dir, "steps": b.steps_run, "extinct": b.extinct,
                      "checksum": b.checksum}, sort_keys=True))
    return 0


def cmd_perturb(ns) -> int:
    out = ns.out or str(Path(load_bundle(ns.bundle).out_dir).with_name(Path(ns.bundle).name + f"_p{ns.at}"))
    b = perturb(ns.bundle, ns.at, ns.prop, ns.delta, out)
    print(json.dumps({"out": b.out_dir, "steps": b.steps_run, "checksum": b.checksum}, sort_keys=True))
    return 0


def cmd_tcv(ns) -> int:
    scn = load_scenario(ns.scenario)
    tc = scn.data.get("tcv", {})
    variables = [ns.variable] if ns.variable else tc.get("variables", [])
    if not variables:
        raise SchemaError("no --variable given and the scenario declares none", "tcv/variables")
    dist = Disturbance(**tc.get("disturbance", {}))
    theta = ns.theta if ns.theta is not None else tc.get("theta", 0.25)
    steps = ns.steps or tc.get("steps", 200)
    trials = ns.trials or tc.get("trials", 1)
    seeds = [scn.seed + i for i in range(trials)]
    for var in variables:
        rep = tcv(lambda s: build_world(scn, seed=s), var, dist, theta, steps, seeds)
        print(json.dumps(rep.to_record(), sort_keys=True))
    return 0


def cmd_metrics(ns) -> int:
    b = load_bundle(ns.bundle)
    events = read_events(b.events)
    window = ns.window or 100
    series = metrics_series(events, window, b.steps_run)
    out = ns.out or os.path.join(b.out_dir, METRICS_FILE)
    write_metrics_csv(series, out)
    last = series[-1] if series else None
    print(json.dumps({"windows": len(series), "csv": out,
                      "k_d": str(last.k_d) if last else "0", "k_p": str(last.k_p) if last else "0",
                      "copy_number": last.copy_number if last else {}}, sort_keys=True))
    return 0


def cmd_validate(ns) -> int:
    scn = load_scenario(ns.scenario)
    world = build_world(scn)
    print(json.dumps({"ok": True, "kinds": len(world.catalog), "loops": len(world.loops),
                      "channels": len(world.channels), "instances": len(world.instances),
                      "complexity": complexity_report(world.catalog)}, sort_keys=True))
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="enerstat", description="Energy-accounted artificial life runs.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write a bundle")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--seeds", type=_seed_range, help="inclusive sweep a..b, one bundle per seed")
    r.add_argument("--steps", type=int)
    r.add_argument("--out")
    r.add_argument("--jobs", type=int)
    r.set_defaults(fn=cmd_run)

    q = sub.add_parser("perturb", help="replay a bundle with an injected perturbation")
    q.add_argument("bundle")
    q.add_argument("--at", type=int, required=True)
    q.add_argument("--prop", required=True)
    q.add_argument("--delta", type=int, required=True)
    q.add_argument("--out")
    q.set_defaults(fn=cmd_perturb)

    t = sub.add_parser("tcv", help="test for a controlled variable")
    t.add_argument("scenario")
    t.add_argument("--variable")
    t.add_argument("--theta", type=float)
    t.add_argument("--steps", type=int)
    t.add_argument("--trials", type=int)
    t.set_defaults(fn=cmd_tcv)

    m = sub.add_parser("metrics", help="recompute k_d/k_p from a bundle's event log")
    m.add_argument("bundle")
    m.add_argument("--window", type=int)
    m.add_argument("--out")
    m.set_defaults(fn=cmd_metrics)

    v = sub.add_parser("validate", help="schema- and niche-check a scenario")
    v.add_argument("scenario")
    v.set_defaults(fn=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return ns.fn(ns)
    except DOMAIN_ERRORS as exc:
        print(f"enerstat {ns.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
