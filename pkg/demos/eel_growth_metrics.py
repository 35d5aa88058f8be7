"""Catalog growth under environment-driven invention.

Runs the growth scenario into a temporary bundle and prints the windowed
discovery and production rates and the first window, if any, where production
overtakes discovery.
"""

import tempfile

from enerstat.metrics import detect_transition, metrics_series
from enerstat.scenario import bundled, load_scenario, read_events, run


def main() -> None:
    scn = load_scenario(bundled("eel_growth"))
    window = scn.data["metrics"]["window"]
    with tempfile.TemporaryDirectory() as tmp:
        b = run(scn, tmp)
        events = read_events(b.events)
    series = metrics_series(events, window, b.steps_run)
    print("window     k_d       k_p    live_kinds")
    for m in series:
        print(f"{m.start:6d}  {float(m.k_d):.4f}  {float(m.k_p):.4f}  {len(m.copy_number):6d}")
    print("transition at", detect_transition(series, hysteresis=2))


if __name__ == "__main__":
    main()
