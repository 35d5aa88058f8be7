"""Translate a program AST into one straight-line Python function.

The generated function has the signature ``fn(g) -> (writes, div_zero)``
where ``g`` holds one zero-argument getter per sensed slot. It follows the
closure evaluator's semantics exactly (evaluation order, saturation,
truncating division, lazy ``if``); the closure evaluator remains the
reference the tests compare against.
"""

from __future__ import annotations

from . import ast as A

_OPS = {A.ADD: "+", A.SUB: "-", A.MUL: "*"}


class _Gen:
    def __init__(self, limit: int):
        self.limit = limit
        self.lines: list[str] = []
        self.slots: dict = {}
        self.refs: dict = {}
        self.locals: set = set()
        self.n = 0

    def tmp(self) -> str:
        self.n += 1
        return f"t{self.n}"

    def emit(self, ind: int, line: str) -> None:
        self.lines.append("    " * ind + line)

    def sat(self, ind: int, t: str) -> None:
        self.emit(ind, f"if {t} > L or {t} < -L: {t} = S({t})")

    def lit(self, v: int) -> str:
        v = max(-self.limit, min(self.limit, v))
        return f"({v})" if v < 0 else str(v)

    def expr(self, n: A.Node, ind: int) -> str:
        k = n.kind
        if k == A.LITERAL:
            return self.lit(n.value)
        if k == A.READ_LOCAL:
            self.locals.add(n.name)
            t = self.tmp()
            self.emit(ind, f"{t} = l_{n.name}")
            return t
        if k == A.SENSE:
            i = self.slots.setdefault(n.ref, len(self.slots))
            t = self.tmp()
            self.emit(ind, f"{t} = g[{i}]()")
            return t
        if k == A.WRITE_LOCAL:
            self.locals.add(n.name)
            v = self.expr(n.children[0], ind)
            t = self.tmp()
            self.emit(ind, f"{t} = l_{n.name} = {v}")
            return t
        if k == A.AFFECT:
            r = self.refs.setdefault(n.ref, f"R{len(self.refs)}")
            v = self.expr(n.children[0], ind)
            self.emit(ind, f"w.append(({r}, {v}))")
            return v
        if k in _OPS:
            a = self.expr(n.children[0], ind)
            b = self.expr(n.children[1], ind)
            t = self.tmp()
            self.emit(ind, f"{t} = {a} {_OPS[k]} {b}")
            self.sat(ind, t)
            return t
        if k == A.DIV:
            a = self.expr(n.children[0], ind)
            b = self.expr(n.children[1], ind)
            t = self.tmp()
            right = n.children[1]
            if right.kind == A.LITERAL and right.value > 0:
                d = self.lit(right.value)
                self.emit(ind, f"{t} = {a} // {d} if {a} >= 0 else -(-{a} // {d})")
                return t
            self.emit(ind, f"if {b} == 0:")
            self.emit(ind + 1, "dz = True")
            self.emit(ind + 1, f"{t} = 0")
            self.emit(ind, "else:")
            self.emit(ind + 1, f"{t} = abs({a}) // abs({b})")
            self.emit(ind + 1, f"if ({a} >= 0) != ({b} >= 0): {t} = -{t}")
            return t
        if k == A.COMPARE:
            a = self.expr(n.children[0], ind)
            b = self.expr(n.children[1], ind)
            t = self.tmp()
            self.emit(ind, f"{t} = 1 if {a} {n.op} {b} else 0")
            return t
        if k == A.IF:
            c = self.expr(n.children[0], ind)
            t = self.tmp()
            self.emit(ind, f"if {c} != 0:")
            self.emit(ind + 1, f"{t} = {self.expr(n.children[1], ind + 1)}")
            self.emit(ind, "else:")
            self.emit(ind + 1, f"{t} = {self.expr(n.children[2], ind + 1)}")
            return t
        if k == A.CLAMP:
            x = self.expr(n.children[0], ind)
            lo = self.expr(n.children[1], ind)
            t = self.tmp()
            self.emit(ind, f"{t} = {lo} if {x} < {lo} else {x}")
            hi = self.expr(n.children[2], ind)
            self.emit(ind, f"if {t} > {hi}: {t} = {hi}")
            return t
        if k == A.SEQ:
            v = "0"
            for c in n.children:
                v = self.expr(c, ind)
            return v
        raise ValueError(f"cannot generate code for node kind {k!r}")


def generate(ast: A.Node, limit: int, saturate) -> tuple:
    """Return ``(function, slots, source)`` for a program."""
    gen = _Gen(limit)
    gen.expr(ast, 1)
    head = ["def _program(g):", "    w = []", "    dz = False"]
    head += [f"    l_{name} = 0" for name in sorted(gen.locals)]
    source = "\n".join(head + gen.lines + ["    return w, dz", ""])
    namespace = {"L": limit, "S": saturate}
    namespace.update({name: ref for ref, name in gen.refs.items()})
    exec(compile(source, "<causal-program>", "exec"), namespace)
    return namespace["_program"], tuple(gen.slots), source
