"""Template: compare interventions that might move a controlled variable.

This is a skeleton for a control-switch study, not a test. Each probe is a
function that edits a freshly built world once, before the run. The script
records what the probe cost in external energy and where the observed
variable settled while a steady leak pulls it down. Probes are ordered from least to most invasive. Add your
own and read the table. No verdict is produced.

Usage: ``python3 demos/switch_probe.py``
"""

from statistics import mean

from enerstat.dsl.evaluator import Program
from enerstat.dsl.parser import parse
from enerstat.scenario import build_world, bundled, load_scenario

VARIABLE = "env.temp"
STEPS = 150
TAIL = 50
LEAK = -3


def baseline(w):
    return 0


def push_variable(w):
    # a one-off external push on the variable itself
    return abs(w.perturb(VARIABLE, 30))


def move_setpoint(w):
    # the heater's target is a literal in its program, so swap in a recompiled
    # program of identical cost
    kind = w.catalog.by_name("heater")
    kind.program = parse("let temp = sense(env.temp); affect(env.temp, temp + clamp(35 - temp, -10, 10))")
    kind.compiled = Program(kind.program)
    return 0


def sever_loop(w):
    w.disabled_loops.add("ctl")
    return 0


PROBES = [baseline, push_variable, move_setpoint, sever_loop]


def main() -> None:
    scn = load_scenario(bundled("thermostat"))
    print(f"{'probe':15s} {'energy':>7s} {'settled':>8s}")
    for probe in PROBES:
        w = build_world(scn)
        spent = probe(w)
        tail = []
        for _ in range(STEPS):
            w.perturb(VARIABLE, LEAK)
            w.run_step()
            tail.append(w.observe(VARIABLE))
        print(f"{probe.__name__:15s} {spent:7d} {mean(tail[-TAIL:]):8.1f}")


if __name__ == "__main__":
    main()
