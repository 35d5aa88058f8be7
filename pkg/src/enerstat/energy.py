"""Integer energy accounting and property perturbation physics.

Every amount is an integer number of micro-energy units (uE). A :class:`Ledger`
holds one free pool plus any number of trapped and buffer accounts; the sum of
all balances is the world's total energy and is audited with exact equality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable, Optional

POOL = "pool"
OUTSIDE = "outside"

LINEAR = "linear"
QUADRATIC = "quadratic"


class EnergyError(Exception):
    pass


class InsufficientBalance(EnergyError):
    pass


class UnknownAccount(EnergyError):
    pass


class ConservationViolation(EnergyError):
    pass


def trapped(key: Hashable) -> tuple:
    return ("trapped", key)


def buffer(key: Hashable) -> tuple:
    return ("buffer", key)


TransferHook = Callable[[object, object, int], None]


class Ledger:
    """Exact energy accounts for one world.

    Account ids are :data:`POOL`, ``("trapped", key)`` or ``("buffer", key)``.
    In closed worlds ``total`` never changes; :meth:`inflow` and
    :meth:`outflow` are the only ways to change it and both notify the hook.
    """

    def __init__(self, total: int, on_transfer: Optional[TransferHook] = None):
        if total < 0:
            raise ValueError("total energy must be >= 0")
        self.balances: dict = {POOL: int(total)}
        self.total = int(total)
        self.on_transfer = on_transfer

    @property
    def free_pool(self) -> int:
        return self.balances[POOL]

    @property
    def trapped(self) -> dict:
        return {a[1]: v for a, v in self.balances.items() if a != POOL and a[0] == "trapped"}

    @property
    def buffer(self) -> dict:
        return {a[1]: v for a, v in self.balances.items() if a != POOL and a[0] == "buffer"}

    def open(self, account) -> None:
        if account not in self.balances:
            self.balances[account] = 0

    def close(self, account) -> None:
        bal = self.balances.pop(account, None)
        if bal is None:
            raise UnknownAccount(account)
        if bal != 0:
            self.balances[account] = bal
            raise EnergyError(f"cannot close {account!r} holding {bal} uE")

    def balance(self, account) -> int:
        try:
            return self.balances[account]
        except KeyError:
            raise UnknownAccount(account) from None

    def transfer(self, src, dst, amount: int) -> None:
        bal = self.balances
        if amount < 0:
            raise ValueError("transfer amount must be >= 0")
        if src not in bal:
            raise UnknownAccount(src)
        if dst not in bal:
            raise UnknownAccount(dst)
        if bal[src] < amount:
            raise InsufficientBalance(f"{src!r} holds {bal[src]} uE, needs {amount}")
        if amount == 0:
            return
        bal[src] -= amount
        bal[dst] += amount
        if self.on_transfer is not None:
            self.on_transfer(src, dst, amount)

    def inflow(self, amount: int, dst=POOL) -> None:
        if amount < 0:
            raise ValueError("inflow must be >= 0")
        if dst not in self.balances:
            raise UnknownAccount(dst)
        self.balances[dst] += amount
        self.total += amount
        if amount and self.on_transfer is not None:
            self.on_transfer(OUTSIDE, dst, amount)

    def outflow(self, src, amount: int) -> None:
        if amount < 0:
            raise ValueError("outflow must be >= 0")
        if src not in self.balances:
            raise UnknownAccount(src)
        if self.balances[src] < amount:
            raise InsufficientBalance(f"{src!r} holds {self.balances[src]} uE, needs {amount}")
        self.balances[src] -= amount
        self.total -= amount
        if amount and self.on_transfer is not None:
            self.on_transfer(src, OUTSIDE, amount)

    def audit(self) -> None:
        values = self.balances.values()
        held = sum(values)
        if held != self.total:
            raise ConservationViolation(f"accounts hold {held} uE but total is {self.total}")
        if values and min(values) < 0:
            negative = [a for a, v in self.balances.items() if v < 0]
            raise ConservationViolation(f"negative balances: {negative}")


def transfer(ledger: Ledger, src, dst, amount: int) -> Ledger:
    ledger.transfer(src, dst, amount)
    return ledger


@dataclass(frozen=True)
class PerturbationModel:
    """Energy needed to push a property away from its default.

    ``linear``: each unit step costs ``kappa``.
    ``quadratic``: the k-th unit step away from default costs ``kappa*(2k-1)``,
    so the stored energy at distance ``d`` is ``kappa*d*d``.
    """

    shape: str = LINEAR
    kappa: int = 1

    def __post_init__(self):
        if self.shape not in (LINEAR, QUADRATIC):
            raise ValueError(f"unknown perturbation shape {self.shape!r}")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")

    def stored(self, distance: int) -> int:
        d = abs(distance)
        if self.shape == LINEAR:
            return self.kappa * d
        return self.kappa * d * d

    def step_cost(self, k: int) -> int:
        """Cost of the k-th unit step away from default (k >= 1)."""
        if self.shape == LINEAR:
            return self.kappa
        return self.kappa * (2 * k - 1)


FREE = PerturbationModel(LINEAR, 0)


@dataclass
class Property:
    name: str
    value: int
    default: int
    perturbation: PerturbationModel = PerturbationModel()
    owner: object = "env"


def stored_property_energy(prop: Property) -> int:
    return prop.perturbation.stored(prop.value - prop.default)


def default_energy(prop: Property) -> int:
    """Energy locked into a property when it is raised from 0 to its default."""
    return prop.perturbation.stored(prop.default)


def energy_delta(prop: Property, new_value: int) -> int:
    """Signed change of stored energy for ``value -> new_value``.

    Positive means the mover pays; negative means energy is released.
    """
    m = prop.perturbation
    return m.stored(new_value - prop.default) - m.stored(prop.value - prop.default)


def perturbation_cost(prop: Property, delta: int) -> int:
    """Gross energy exchanged along the unit-step path ``value -> value+delta``."""
    m = prop.perturbation
    x = prop.value - prop.default
    y = x + delta
    if x * y >= 0:
        return abs(m.stored(y) - m.stored(x))
    # the path crosses the default: release everything, then pay from zero
    return m.stored(x) + m.stored(y)


def affordable_value(prop: Property, target: int, budget: int) -> int:
    """Furthest value on the path toward ``target`` whose net cost fits ``budget``."""
    if energy_delta(prop, target) <= budget:
        return target
    v = prop.value
    step = 1 if target > v else -1
    n = abs(target - v)
    x = v - prop.default
    # net cost decreases until the default is reached, then increases
    lo = min(n, abs(x)) if x * step < 0 else 0
    hi = n
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if energy_delta(prop, v + step * mid) <= budget:
            lo = mid
        else:
            hi = mid - 1
    return v + step * lo


def mass_of(assembly_cost: int, c_squared: int = 1) -> int:
    if c_squared < 1:
        raise ValueError("c_squared must be >= 1")
    return -(-assembly_cost // c_squared)


def move_cost(mass: int, speed: int) -> int:
    if speed < 0:
        raise ValueError("speed must be >= 0")
    return -(-(mass * speed * speed) // 2)
