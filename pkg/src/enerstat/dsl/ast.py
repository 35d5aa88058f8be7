"""AST node and property-reference types for causal-power programs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

LITERAL = "literal"
READ_LOCAL = "read-local"
WRITE_LOCAL = "write-local"
SENSE = "sense"
AFFECT = "affect"
ADD = "add"
SUB = "sub"
MUL = "mul"
DIV = "div"
COMPARE = "compare"
IF = "if-then-else"
CLAMP = "clamp"
SEQ = "seq"

NODE_KINDS = (
    LITERAL, READ_LOCAL, WRITE_LOCAL, SENSE, AFFECT, ADD, SUB, MUL, DIV,
    COMPARE, IF, CLAMP, SEQ,
)
BINARY = {ADD: "+", SUB: "-", MUL: "*", DIV: "/"}
COMPARE_OPS = ("<", "<=", ">", ">=", "==", "!=")

ENV = "env"
STRUCT = "struct"
SELF = "self"


@dataclass(frozen=True)
class Span:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


@dataclass(frozen=True, order=True)
class PropRef:
    """``env.name``, ``self.name`` or ``struct[index].name``.

    ``index`` is a catalog (birth-order) index and only set for ``struct``.
    """

    scope: str
    name: str
    index: Optional[int] = None

    def __str__(self) -> str:
        if self.scope == STRUCT:
            return f"struct[{self.index}].{self.name}"
        return f"{self.scope}.{self.name}"

    @classmethod
    def env(cls, name: str) -> "PropRef":
        return cls(ENV, name)

    @classmethod
    def own(cls, name: str) -> "PropRef":
        return cls(SELF, name)

    @classmethod
    def of(cls, index: int, name: str) -> "PropRef":
        return cls(STRUCT, name, index)


@dataclass(frozen=True)
class Node:
    kind: str
    children: tuple = ()
    value: Optional[int] = None
    name: Optional[str] = None
    ref: Optional[PropRef] = None
    op: Optional[str] = None
    span: Optional[Span] = field(default=None, compare=False, repr=False)


def lit(v: int, span=None) -> Node:
    return Node(LITERAL, value=v, span=span)


def local(name: str, span=None) -> Node:
    return Node(READ_LOCAL, name=name, span=span)


def let(name: str, expr: Node, span=None) -> Node:
    return Node(WRITE_LOCAL, (expr,), name=name, span=span)


def sense(ref: PropRef, span=None) -> Node:
    return Node(SENSE, ref=ref, span=span)


def affect(ref: PropRef, expr: Node, span=None) -> Node:
    return Node(AFFECT, (expr,), ref=ref, span=span)


def binop(kind: str, a: Node, b: Node, span=None) -> Node:
    return Node(kind, (a, b), span=span)


def compare(op: str, a: Node, b: Node, span=None) -> Node:
    return Node(COMPARE, (a, b), op=op, span=span)


def if_(cond: Node, then: Node, other: Node, span=None) -> Node:
    return Node(IF, (cond, then, other), span=span)


def clamp(x: Node, lo: Node, hi: Node, span=None) -> Node:
    return Node(CLAMP, (x, lo, hi), span=span)


def seq(*stmts: Node, span=None) -> Node:
    return Node(SEQ, tuple(stmts), span=span)


def walk(node: Node) -> Iterator[Node]:
    """Pre-order traversal without recursion."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.children))


def node_count(node: Node) -> int:
    return sum(1 for _ in walk(node))


def depth(node: Node) -> int:
    best = 0
    stack = [(node, 1)]
    while stack:
        n, d = stack.pop()
        best = max(best, d)
        stack.extend((c, d + 1) for c in n.children)
    return best


def refs(node: Node) -> list[tuple[str, PropRef, Optional[Span]]]:
    """Every ``(mode, ref, span)`` touched by a program, mode ``sense``/``affect``."""
    return [(n.kind, n.ref, n.span) for n in walk(node) if n.kind in (SENSE, AFFECT)]
