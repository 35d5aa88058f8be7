"""Template: list what each loop could possibly sense.

This is a starting point for a variable-controllability study, not a test.
For every loop it collects the references its member kinds read or write,
grouped by scope, together with the radius over which ``struct[j]`` reads
reach. The output is a candidate list to be cut down by experiment, for
instance with ``enerstat tcv`` on each candidate. No verdict is produced.

Usage: ``python3 demos/sensor_enumeration.py path/to.scenario``
"""

import json
import sys
from collections import defaultdict

from enerstat.dsl import ast as A
from enerstat.scenario import build_world, bundled, load_scenario


def enumerate_sensors(world) -> dict:
    report = {}
    for loop in world.loops.values():
        reads, writes = defaultdict(set), defaultdict(set)
        radius = 0
        for iid in sorted(loop.members):
            kind = world.catalog[world.instances[iid].kind]
            radius = max(radius, kind.radius)
            for mode, ref, _ in A.refs(kind.program):
                name = f"struct[{ref.index}].{ref.name}" if ref.scope == A.STRUCT else f"{ref.scope}.{ref.name}"
                (writes if mode == A.AFFECT else reads)[ref.scope].add(name)
        report[loop.id] = {
            "members": len(loop.members),
            "reads": {k: sorted(v) for k, v in sorted(reads.items())},
            "writes": {k: sorted(v) for k, v in sorted(writes.items())},
            "struct_radius": radius,
        }
    return report


def main(path=None) -> None:
    scn = load_scenario(path or bundled("thermostat"))
    print(json.dumps(enumerate_sensors(build_world(scn)), indent=2))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
