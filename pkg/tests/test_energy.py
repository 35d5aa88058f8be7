import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from enerstat.energy import (
    LINEAR, POOL, QUADRATIC, ConservationViolation, InsufficientBalance, Ledger, PerturbationModel,
    Property, UnknownAccount, affordable_value, buffer, energy_delta, mass_of, move_cost,
    perturbation_cost, stored_property_energy, transfer, trapped,
)


def unit_walk(prop: Property, delta: int) -> int:
    """Oracle: pay or receive one unit step at a time along the path."""
    m = prop.perturbation
    x = prop.value - prop.default
    total = 0
    step = 1 if delta > 0 else -1
    for _ in range(abs(delta)):
        y = x + step
        if abs(y) > abs(x):
            k = abs(y)
            total += m.kappa if m.shape == LINEAR else m.kappa * (2 * k - 1)
        else:
            k = abs(x)
            total += m.kappa if m.shape == LINEAR else m.kappa * (2 * k - 1)
        x = y
    return total


def prop(shape=LINEAR, kappa=1, value=0, default=0):
    return Property("p", value, default, PerturbationModel(shape, kappa))


# ledger ----------------------------------------------------------------------

def test_transfer_moves_exact_amount():
    led = Ledger(100)
    led.open(buffer(3))
    transfer(led, POOL, buffer(3), 30)
    assert led.free_pool == 70
    assert led.buffer == {3: 30}
    assert led.total == 100


def test_zero_transfer_is_identity():
    led = Ledger(100)
    led.open(buffer(1))
    before = dict(led.balances)
    led.transfer(POOL, buffer(1), 0)
    assert led.balances == before


def test_overdraw_raises_and_changes_nothing():
    led = Ledger(10)
    led.open(buffer(1))
    with pytest.raises(InsufficientBalance):
        led.transfer(POOL, buffer(1), 30)
    assert led.free_pool == 10


def test_unknown_account():
    led = Ledger(10)
    with pytest.raises(UnknownAccount):
        led.transfer(POOL, buffer(9), 1)
    with pytest.raises(UnknownAccount):
        led.balance(trapped(2))


def test_negative_amount_rejected():
    led = Ledger(10)
    led.open(buffer(1))
    with pytest.raises(ValueError):
        led.transfer(POOL, buffer(1), -1)


def test_close_requires_empty_account():
    led = Ledger(10)
    led.open(buffer(1))
    led.transfer(POOL, buffer(1), 4)
    with pytest.raises(Exception):
        led.close(buffer(1))
    assert led.balance(buffer(1)) == 4
    led.transfer(buffer(1), POOL, 4)
    led.close(buffer(1))
    assert buffer(1) not in led.balances


def test_audit_detects_tampering():
    led = Ledger(10)
    led.audit()
    led.balances[POOL] = 11
    with pytest.raises(ConservationViolation):
        led.audit()
    led.balances[POOL] = 12
    led.balances[buffer(0)] = -2
    with pytest.raises(ConservationViolation):
        led.audit()


def test_inflow_outflow_change_total_and_notify():
    seen = []
    led = Ledger(5, on_transfer=lambda s, d, a: seen.append((s, d, a)))
    led.inflow(7)
    led.outflow(POOL, 2)
    assert led.total == 10 and led.free_pool == 10
    assert seen == [("outside", POOL, 7), (POOL, "outside", 2)]


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 60)), max_size=60))
def test_conservation_under_random_transfers(ops):
    accounts = [POOL] + [buffer(i) for i in range(4)]
    led = Ledger(500)
    for a in accounts[1:]:
        led.open(a)
    for s, d, amt in ops:
        try:
            led.transfer(accounts[s], accounts[d], amt)
        except InsufficientBalance:
            pass
        assert sum(led.balances.values()) == 500 == led.total
        assert min(led.balances.values()) >= 0


# property physics ------------------------------------------------------------

def test_stored_energy_examples():
    assert stored_property_energy(prop(LINEAR, 2, value=5)) == 10
    assert stored_property_energy(prop(QUADRATIC, 3, value=4, default=4)) == 0
    assert stored_property_energy(prop(QUADRATIC, 1, value=3)) == 9
    assert unit_walk(prop(QUADRATIC, 1), 3) == 9


def test_perturbation_cost_examples():
    assert perturbation_cost(prop(LINEAR, 3), -4) == 12
    assert perturbation_cost(prop(LINEAR, 3, value=7), 0) == 0
    assert perturbation_cost(prop(QUADRATIC, 1, value=2), 2) == 12 == unit_walk(prop(QUADRATIC, 1, value=2), 2)


def test_mass_and_move_examples():
    assert mass_of(8, 4) == 2
    assert mass_of(8, 1) == 8
    assert mass_of(9, 4) == 3
    assert move_cost(2, 3) == 9
    assert move_cost(5, 0) == 0
    assert move_cost(1, 1) == 1
    with pytest.raises(ValueError):
        mass_of(3, 0)
    with pytest.raises(ValueError):
        move_cost(1, -1)


def test_perturbation_model_validation():
    with pytest.raises(ValueError):
        PerturbationModel("cubic", 1)
    with pytest.raises(ValueError):
        PerturbationModel(LINEAR, -1)


models = st.builds(PerturbationModel, st.sampled_from([LINEAR, QUADRATIC]), st.integers(0, 5))


@given(models, st.integers(-20, 20), st.integers(-20, 20), st.integers(-16, 16))
def test_cost_matches_unit_walk(model, default, value, delta):
    p = Property("p", value, default, model)
    assert perturbation_cost(p, delta) == unit_walk(p, delta)


@given(models, st.integers(-10, 10), st.integers(0, 16), st.integers(0, 16), st.sampled_from([1, -1]))
def test_path_additivity(model, value, a, b, sign):
    p = Property("p", value, 0, model)
    first = perturbation_cost(p, sign * a)
    q = Property("p", value + sign * a, 0, model)
    if value * sign >= 0:  # monotone path away from default
        assert first + perturbation_cost(q, sign * b) == perturbation_cost(p, sign * (a + b))


@given(models, st.integers(-30, 30))
def test_round_trip_from_default(model, v):
    p = Property("p", 0, 0, model)
    out = perturbation_cost(p, v)
    q = Property("p", v, 0, model)
    back = perturbation_cost(q, -v)
    assert out == back
    assert energy_delta(p, v) + energy_delta(q, 0) == 0


@given(st.integers(0, 10_000), st.integers(1, 50))
def test_mass_never_undercharges(e, c2):
    m = mass_of(e, c2)
    assert m * c2 >= e and (m - 1) * c2 < e
    assert m == math.ceil(e / c2)


@given(st.integers(0, 500), st.integers(0, 100))
def test_move_cost_never_undercharges(m, v):
    c = move_cost(m, v)
    assert 2 * c >= m * v * v and 2 * (c - 1) < m * v * v


@given(models, st.integers(-15, 15), st.integers(-15, 15), st.integers(-30, 30), st.integers(0, 400))
def test_affordable_value_is_furthest_within_budget(model, default, value, target, budget):
    p = Property("p", value, default, model)
    got = affordable_value(p, target, budget)
    assert energy_delta(p, got) <= budget or got == value
    step = 1 if target >= value else -1
    path = list(range(value, target + step, step))
    assert got in path
    # oracle: scan the path for the furthest affordable point
    best = value
    for v in path:
        if energy_delta(p, v) <= budget:
            best = v
    assert got == best
