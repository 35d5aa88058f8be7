"""Assembly metrics over event logs, the controlled-variable test, and VAF.

Every metric here is a pure fold over the event log, so recomputing from a
persisted ``events.jsonl`` gives the same numbers as the live run.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .dsl import ast as A

CONTROLLED = "Controlled"
NOT_CONTROLLED = "NotControlled"
INCONCLUSIVE = "Inconclusive"

# ast_size and niche_depth stand in for a real assembly index
COMPLEXITY_LABEL = "proxy"


class EmptyWindow(ValueError):
    pass


class DegenerateDisturbance(ValueError):
    pass


class SeverUndefined(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class ZeroVarianceObserved(ValueError):
    pass


def _norm(ev) -> tuple[int, str, dict]:
    if isinstance(ev, dict):
        return ev["step"], ev["event"], ev
    return ev.step, ev.kind, ev.payload


@dataclass
class AssemblyMetrics:
    start: int
    window: int
    copy_number: dict = field(default_factory=dict)
    discoveries: list = field(default_factory=list)
    productions: list = field(default_factory=list)
    k_d: Fraction = Fraction(0)
    k_p: Fraction = Fraction(0)

    @property
    def end(self) -> int:
        return self.start + self.window


def update_metrics(events: Iterable, window: int, start: Optional[int] = None) -> AssemblyMetrics:
    """Discovery and production rates over ``[start, start + window)``.

    ``start`` defaults to the window-aligned block holding the last event.
    A production is an Assemble of a kind that was already discovered; k_p
    averages per-kind production rates over every kind discovered by the
    end of the window. Copy numbers count live instances at the window end.
    """
    if window <= 0:
        raise EmptyWindow(f"window must be positive, got {window}")
    evs = [_norm(e) for e in events]
    if start is None:
        last = evs[-1][0] if evs else 0
        start = (last // window) * window
    end = start + window
    m = AssemblyMetrics(start, window)
    seen: set = set()
    copies: dict = {}
    per_kind: dict = {}
    for step, kind, p in evs:
        if step >= end:
            break
        if kind == "Assemble":
            k = p["kind_index"]
            copies[k] = copies.get(k, 0) + 1
            if k in seen:
                if step >= start:
                    m.productions.append((step, k))
                    per_kind[k] = per_kind.get(k, 0) + 1
            else:
                seen.add(k)
                if step >= start:
                    m.discoveries.append((step, k))
        elif kind in ("Disassemble", "Death"):
            k = p["kind_index"]
            copies[k] -= 1
    m.copy_number = {k: n for k, n in sorted(copies.items()) if n > 0}
    m.k_d = Fraction(len(m.discoveries), window)
    if seen:
        m.k_p = sum((Fraction(per_kind.get(k, 0), window) for k in seen), Fraction(0)) / len(seen)
    return m


def metrics_series(events: Iterable, window: int, steps: Optional[int] = None) -> list[AssemblyMetrics]:
    """Consecutive aligned windows covering ``[0, steps)``."""
    evs = list(events)
    if steps is None:
        steps = (_norm(evs[-1])[0] + 1) if evs else 0
    n = max(1, math.ceil(steps / window))
    return [update_metrics(evs, window, i * window) for i in range(n)]


def detect_transition(series: Sequence[AssemblyMetrics], hysteresis: int = 1) -> Optional[int]:
    """First window start where k_p < k_d gives way to k_d < k_p for ``hysteresis`` windows."""
    if not series:
        raise ValueError("series must be nonempty")
    if hysteresis < 1:
        raise ValueError("hysteresis must be >= 1")
    below = False
    for i, m in enumerate(series):
        if m.k_p < m.k_d:
            below = True
        elif m.k_d < m.k_p and below:
            run = series[i:i + hysteresis]
            if len(run) == hysteresis and all(x.k_d < x.k_p for x in run):
                return m.start
    return None


def write_metrics_csv(series: Sequence[AssemblyMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_start", "window_end", "discoveries", "productions", "k_d", "k_p",
                    "k_d_float", "k_p_float", "live_kinds", "live_instances"])
        for m in series:
            w.writerow([m.start, m.end, len(m.discoveries), len(m.productions), str(m.k_d), str(m.k_p),
                        f"{float(m.k_d):.6f}", f"{float(m.k_p):.6f}", len(m.copy_number),
                        sum(m.copy_number.values())])


# controlled-variable test ----------------------------------------------------

@dataclass(frozen=True)
class Disturbance:
    shape: str = "square"
    amplitude: int = 10
    period: int = 20
    noise: int = 0

    def signal(self, steps: int, rng: random.Random) -> list[int]:
        if self.shape not in ("square", "sine", "constant"):
            raise ValueError(f"unknown disturbance shape {self.shape!r}")
        out = []
        for t in range(steps):
            if self.shape == "square":
                base = self.amplitude if (t % self.period) < self.period // 2 else -self.amplitude
            elif self.shape == "sine":
                base = round(self.amplitude * math.sin(2 * math.pi * t / self.period))
            else:
                base = self.amplitude
            if self.noise:
                base += rng.randint(-self.noise, self.noise)
            out.append(base)
        return out

    def check(self) -> None:
        varies = self.noise > 0 or (self.shape != "constant" and self.amplitude != 0 and self.period >= 2)
        if not varies:
            raise DegenerateDisturbance(f"{self} has zero variance")


@dataclass
class TcvReport:
    variable: str
    attenuation: float
    verdict: str
    trials: int
    disturbance: Disturbance
    theta: float
    var_active: float = 0.0
    var_severed: float = 0.0

    def to_record(self) -> dict:
        return {"v": 1, "report": "tcv", "variable": self.variable, "S": self.attenuation,
                "verdict": self.verdict, "trials": self.trials, "theta": self.theta,
                "var_active": self.var_active, "var_severed": self.var_severed,
                "disturbance": vars(self.disturbance)}


def verdict_for(s: float, theta: float) -> str:
    if s < theta:
        return CONTROLLED
    if s > 1 - theta:
        return NOT_CONTROLLED
    return INCONCLUSIVE


def _trajectory(world, variable: str, signal: list[int]) -> list[int]:
    from .world import step_world

    out = []
    prev = 0
    for d in signal:
        world.perturb(variable, d - prev)
        prev = d
        step_world(world)
        out.append(world.observe(variable))
    return out


def tcv(factory: Callable[[int], object], variable: str, disturbance: Disturbance, theta: float = 0.25,
        steps: int = 200, seeds: Sequence[int] = (0,)) -> TcvReport:
    """Paired runs with the controller active and severed, disturbance added to ``variable``.

    The disturbance signal is superimposed on the variable: each step moves
    it by the signal's change since the previous step. S is the ratio of the
    mean per-seed variances (active over severed).
    """
    disturbance.check()
    if not 0 < theta < 0.5:
        raise ValueError("theta must lie in (0, 0.5)")
    act, sev = [], []
    for seed in seeds:
        signal = disturbance.signal(steps, random.Random(f"disturbance:{seed}"))
        active = factory(seed)
        if not active.controller_loops:
            raise SeverUndefined("scenario declares no controller loops")
        active.observe(variable)
        severed = factory(seed)
        severed.disabled_loops = set(severed.controller_loops)
        act.append(float(np.var(_trajectory(active, variable, signal))))
        sev.append(float(np.var(_trajectory(severed, variable, signal))))
    va, vs = float(np.mean(act)), float(np.mean(sev))
    if vs == 0:
        s = 0.0 if va == 0 else math.inf
    else:
        s = va / vs
    return TcvReport(variable, s, verdict_for(s, theta), len(seeds), disturbance, theta, va, vs)


def vaf(model: Sequence[float], observed: Sequence[float]) -> float:
    """Variance accounted for: ``1 - Var(observed - model) / Var(observed)``, clamped to [0, 1]."""
    m = np.asarray(model, dtype=float)
    o = np.asarray(observed, dtype=float)
    if m.shape != o.shape or o.ndim != 1 or len(o) < 2:
        raise LengthMismatch(f"need equal 1-d trajectories of length >= 2, got {m.shape} and {o.shape}")
    var_o = np.var(o)
    if var_o == 0:
        raise ZeroVarianceObserved("observed trajectory is constant")
    return float(min(1.0, max(0.0, 1.0 - np.var(o - m) / var_o)))


# complexity proxies ----------------------------------------------------------

def complexity_report(catalog) -> dict[int, dict]:
    """Per-kind ``ast_size`` and ``niche_depth`` (longest reference chain, 1 for env-only)."""
    depth: dict[int, int] = {}
    out = {}
    for kind in catalog:
        deps = {r.index for _, r, _ in A.refs(kind.program) if r.scope == A.STRUCT}
        depth[kind.index] = 1 + max((depth[j] for j in deps), default=0)
        out[kind.index] = {"name": kind.name, "ast_size": A.node_count(kind.program),
                           "niche_depth": depth[kind.index], "label": COMPLEXITY_LABEL}
    return out
