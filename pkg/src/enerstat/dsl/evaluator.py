"""Deterministic, statically metered evaluation of causal-power programs.

Programs are compiled once into nested closures. Running one never applies
its writes; they are returned in an :class:`EffectSet` for the engine to
apply in its own phase.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

from . import ast as A
from .codegen import generate
from .costs import CostTable, static_costs
from .niche import Niche, niche_check
from .parser import DslError

# arithmetic saturates here so generated programs cannot grow unbounded integers
VALUE_LIMIT = 10**9


class EnergyShortfall(DslError):
    pass


class RefOutsideNiche(DslError):
    pass


@dataclass
class EffectSet:
    writes: list = field(default_factory=list)
    dissipated: int = 0
    div_zero: bool = False


class _Ctx:
    __slots__ = ("get", "locals", "writes", "div_zero")

    def __init__(self, getters):
        self.get = getters
        self.locals: dict = {}
        self.writes: list = []
        self.div_zero = False


def _sat(v: int) -> int:
    if v > VALUE_LIMIT:
        return VALUE_LIMIT
    if v < -VALUE_LIMIT:
        return -VALUE_LIMIT
    return v


def _div(a: int, b: int, ctx: _Ctx) -> int:
    if b == 0:
        ctx.div_zero = True
        return 0
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


_CMP = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}


def _compile(n: A.Node, slots: dict) -> Callable[[_Ctx], int]:
    """Compile ``n``; each distinct sensed ref gets a slot in ``slots``."""
    k = n.kind
    lim = VALUE_LIMIT
    if k == A.LITERAL:
        v = _sat(n.value)
        return lambda ctx: v
    if k == A.READ_LOCAL:
        name = n.name
        return lambda ctx: ctx.locals.get(name, 0)
    if k == A.SENSE:
        i = slots.setdefault(n.ref, len(slots))
        return lambda ctx: ctx.get[i]()
    cs = [_compile(c, slots) for c in n.children]
    if k == A.WRITE_LOCAL:
        name, f = n.name, cs[0]

        def write_local(ctx):
            v = ctx.locals[name] = f(ctx)
            return v
        return write_local
    if k == A.AFFECT:
        ref, f = n.ref, cs[0]

        def affect(ctx):
            v = f(ctx)
            ctx.writes.append((ref, v))
            return v
        return affect
    if k in (A.ADD, A.SUB, A.MUL):
        a, b = cs
        right = n.children[1]
        if right.kind == A.LITERAL and k != A.MUL:
            # x + literal and x - literal skip one closure call
            c = _sat(right.value) if k == A.ADD else -_sat(right.value)

            def add_const(ctx):
                v = a(ctx) + c
                return v if -lim <= v <= lim else _sat(v)
            return add_const
        if k == A.ADD:
            def add(ctx):
                v = a(ctx) + b(ctx)
                return v if -lim <= v <= lim else _sat(v)
            return add
        if k == A.SUB:
            def sub(ctx):
                v = a(ctx) - b(ctx)
                return v if -lim <= v <= lim else _sat(v)
            return sub

        def mul(ctx):
            v = a(ctx) * b(ctx)
            return v if -lim <= v <= lim else _sat(v)
        return mul
    if k == A.DIV:
        a, b = cs
        right = n.children[1]
        if right.kind == A.LITERAL and right.value > 0:
            d = _sat(right.value)

            def div_const(ctx):
                x = a(ctx)
                return x // d if x >= 0 else -(-x // d)
            return div_const
        return lambda ctx: _div(a(ctx), b(ctx), ctx)
    if k == A.COMPARE:
        a, b = cs
        right = n.children[1]
        if right.kind == A.LITERAL:
            c = _sat(right.value)
            test = _CMP[n.op]
            return lambda ctx: 1 if test(a(ctx), c) else 0
        test = _CMP[n.op]
        return lambda ctx: 1 if test(a(ctx), b(ctx)) else 0
    if k == A.IF:
        c, t, e = cs
        return lambda ctx: t(ctx) if c(ctx) != 0 else e(ctx)
    if k == A.CLAMP:
        x, lo, hi = cs

        def clamp(ctx):
            # same as min(max(v, low), high), operands evaluated left to right
            v = x(ctx)
            low = lo(ctx)
            if v < low:
                v = low
            high = hi(ctx)
            return high if v > high else v
        return clamp
    if k == A.SEQ:
        stmts = tuple(cs)

        def run_seq(ctx):
            v = 0
            for s in stmts:
                v = s(ctx)
            return v
        return run_seq
    raise DslError(f"cannot evaluate node kind {k!r}")


class Program:
    """A compiled program: call with a sense function, get ``(writes, div_zero)``.

    ``slots`` lists the distinct sensed refs in first-use order; callers that
    run the same program many times bind one zero-argument getter per slot
    and use :meth:`run`. The default backend generates a single Python
    function; ``backend="closure"`` uses the nested-closure evaluator.
    """

    __slots__ = ("ast", "slots", "backend", "source", "_fn", "_run")

    def __init__(self, ast: A.Node, backend: str = "codegen"):
        self.ast = ast
        self.backend = backend
        if backend == "codegen":
            self._run, self.slots, self.source = generate(ast, VALUE_LIMIT, _sat)
        elif backend == "closure":
            table: dict = {}
            self._fn = _compile(ast, table)
            self.slots = tuple(table)
            self.source = None
            self._run = self._run_closure
        else:
            raise ValueError(f"unknown backend {backend!r}")

    def _run_closure(self, getters) -> tuple[list, bool]:
        ctx = _Ctx(getters)
        self._fn(ctx)
        return ctx.writes, ctx.div_zero

    def __call__(self, sense: Callable[[A.PropRef], int]) -> tuple[list, bool]:
        return self._run([(lambda r=r: sense(r)) for r in self.slots])

    def run(self, getters) -> tuple[list, bool]:
        return self._run(getters)


def compile_program(ast: A.Node) -> Program:
    return Program(ast)


def execute(program: Union[A.Node, Program], sensed: Mapping[A.PropRef, int], budget: int,
            table: Optional[CostTable] = None, niche: Optional[Niche] = None) -> EffectSet:
    """Run a program against a read-only snapshot of in-niche properties.

    Bills the full static demand (fed) regardless of the path taken; raises
    :class:`EnergyShortfall` without running anything if ``budget < fed``.
    """
    if isinstance(program, A.Node):
        program = Program(program)
    fed, _ = static_costs(program.ast, table or CostTable())
    if budget < fed:
        raise EnergyShortfall(f"budget {budget} uE below demand {fed} uE")
    if niche is not None:
        bad = niche_check(program.ast, niche)
        if bad:
            v = bad[0]
            line, col = (v.span.line, v.span.col) if v.span else (0, 0)
            raise RefOutsideNiche(f"cannot {v.mode} {v.ref}", line, col)

    def sense(ref):
        try:
            return sensed[ref]
        except KeyError:
            raise RefOutsideNiche(f"no sensed value for {ref}") from None

    writes, div_zero = program(sense)
    return EffectSet(writes, fed, div_zero)
