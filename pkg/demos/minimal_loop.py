"""One loop, one effector: an impulse of energy drains back to the setpoint.

Run with ``python3 demos/minimal_loop.py``.
"""

from enerstat.scenario import build_world, bundled, load_scenario


def main() -> None:
    scn = load_scenario(bundled("minimal_loop"))
    w = build_world(scn)
    loop = w.loops["0"]
    print("step  loop_energy  window   env.heat")
    for _ in range(scn.steps):
        w.run_step()
        if w.step % 5 == 0:
            print(f"{w.step:4d}  {w.loop_energy(loop):11d}  {loop.window:<7}  {w.observe('env.heat'):8d}")
    print(f"ledger total {sum(w.ledger.balances.values())} of {w.ledger.total}")


if __name__ == "__main__":
    main()
