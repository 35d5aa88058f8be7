"""Learning against a frozen policy on the recovery scenario.

Each seed is run twice, once with credit assignment on and once with the
initial weights frozen. The score is the fraction of steps spent in Stasis.
"""

import sys

from enerstat.scenario import build_world, bundled, load_scenario


def stasis_fraction(scn, seed: int, learning: bool) -> float:
    w = build_world(scn, seed=seed)
    for lp in w.loops.values():
        lp.learning = learning
    main = w.loops["main"]
    hits = 0
    for _ in range(scn.steps):
        w.run_step()
        hits += main.alive and main.window == "Stasis"
    return hits / scn.steps


def main(n: int = 10) -> None:
    scn = load_scenario(bundled("recovery"))
    wins = 0
    print("seed  learning  frozen")
    for seed in range(1, n + 1):
        on, off = stasis_fraction(scn, seed, True), stasis_fraction(scn, seed, False)
        wins += on > off
        print(f"{seed:4d}  {on:8.3f}  {off:6.3f}")
    print(f"learning ahead on {wins}/{n} seeds")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 10)
