"""Recursive-descent parser and printer for causal-power programs (``.cp``).

Grammar::

    program    = stmt { ";" stmt } [ ";" ] ;
    stmt       = "let" IDENT "=" expr | expr ;
    expr       = "if" expr "then" expr "else" expr | comparison ;
    comparison = additive [ ("<"|"<="|">"|">="|"=="|"!=") additive ] ;
    additive   = term { ("+"|"-") term } ;
    term       = unary { ("*"|"/") unary } ;
    unary      = "-" unary | primary ;
    primary    = INT | IDENT | "sense" "(" ref ")"
               | "affect" "(" ref "," expr ")"
               | "clamp" "(" expr "," expr "," expr ")"
               | "(" expr ")" | "{" program "}" ;
    ref        = "env" "." IDENT | "self" "." IDENT
               | "struct" "[" INT "]" "." IDENT ;

``#`` starts a comment that runs to the end of the line.
"""

from __future__ import annotations

import re
from typing import Optional

from . import ast as A

MAX_DEPTH = 64

KEYWORDS = {"let", "if", "then", "else", "sense", "affect", "clamp", "env", "self", "struct"}

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+) | (?P<nl>\n) | (?P<comment>\#[^\n]*)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|==|!=|[-+*/<>=(){}\[\],;.])
    """,
    re.VERBOSE,
)


class DslError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0, source: Optional[str] = None):
        self.message = message
        self.line = line
        self.col = col
        self.source = source
        super().__init__(str(self))

    def __str__(self) -> str:
        where = f"{self.source}:" if self.source else ""
        return f"{where}{self.line}:{self.col}: {self.message}"


class DslSyntaxError(DslError):
    pass


class DepthLimitExceeded(DslError):
    pass


def _tokenize(text: str) -> list[tuple[str, str, int, int]]:
    out = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        value = m.group()
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "ident" and value in KEYWORDS:
            out.append(("kw", value, line, col))
        elif kind not in ("ws", "comment"):
            out.append((kind, value, line, col))
        pos = m.end()
    out.append(("eof", "", line, pos - line_start + 1))
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.nesting = 0

    def peek(self, value: Optional[str] = None) -> bool:
        tok = self.toks[self.i]
        return tok[1] == value and tok[0] in ("op", "kw") if value is not None else False

    def span(self) -> A.Span:
        tok = self.toks[self.i]
        return A.Span(tok[2], tok[3])

    def fail(self, msg: str):
        tok = self.toks[self.i]
        found = "end of input" if tok[0] == "eof" else repr(tok[1])
        raise DslSyntaxError(f"{msg}, found {found}", tok[2], tok[3])

    def expect(self, value: str) -> None:
        if not self.peek(value):
            self.fail(f"expected {value!r}")
        self.i += 1

    def take(self, kind: str) -> str:
        tok = self.toks[self.i]
        if tok[0] != kind:
            self.fail(f"expected {'integer' if kind == 'int' else 'identifier'}")
        self.i += 1
        return tok[1]

    def enter(self) -> None:
        self.nesting += 1
        if self.nesting > MAX_DEPTH:
            tok = self.toks[self.i]
            raise DepthLimitExceeded(f"nesting deeper than {MAX_DEPTH}", tok[2], tok[3])

    def program(self, closing: Optional[str] = None) -> A.Node:
        sp = self.span()
        stmts = [self.stmt()]
        while self.peek(";"):
            self.i += 1
            if self.toks[self.i][0] == "eof" or (closing and self.peek(closing)):
                break
            stmts.append(self.stmt())
        if len(stmts) == 1:
            return stmts[0]
        return A.seq(*stmts, span=sp)

    def stmt(self) -> A.Node:
        if self.peek("let"):
            sp = self.span()
            self.i += 1
            name = self.take("ident")
            self.expect("=")
            return A.let(name, self.expr(), span=sp)
        return self.expr()

    def expr(self) -> A.Node:
        self.enter()
        try:
            if self.peek("if"):
                sp = self.span()
                self.i += 1
                cond = self.expr()
                self.expect("then")
                then = self.expr()
                self.expect("else")
                return A.if_(cond, then, self.expr(), span=sp)
            return self.comparison()
        finally:
            self.nesting -= 1

    def comparison(self) -> A.Node:
        left = self.additive()
        tok = self.toks[self.i]
        if tok[0] == "op" and tok[1] in A.COMPARE_OPS:
            sp = self.span()
            self.i += 1
            return A.compare(tok[1], left, self.additive(), span=sp)
        return left

    def additive(self) -> A.Node:
        left = self.term()
        while self.peek("+") or self.peek("-"):
            sp = self.span()
            kind = A.ADD if self.toks[self.i][1] == "+" else A.SUB
            self.i += 1
            left = A.binop(kind, left, self.term(), span=sp)
        return left

    def term(self) -> A.Node:
        left = self.unary()
        while self.peek("*") or self.peek("/"):
            sp = self.span()
            kind = A.MUL if self.toks[self.i][1] == "*" else A.DIV
            self.i += 1
            left = A.binop(kind, left, self.unary(), span=sp)
        return left

    def unary(self) -> A.Node:
        if self.peek("-"):
            sp = self.span()
            self.i += 1
            self.enter()
            try:
                operand = self.unary()
            finally:
                self.nesting -= 1
            if operand.kind == A.LITERAL:
                return A.lit(-operand.value, span=sp)
            return A.binop(A.SUB, A.lit(0, span=sp), operand, span=sp)
        return self.primary()

    def primary(self) -> A.Node:
        tok = self.toks[self.i]
        sp = self.span()
        if tok[0] == "int":
            self.i += 1
            return A.lit(int(tok[1]), span=sp)
        if tok[0] == "ident":
            self.i += 1
            return A.local(tok[1], span=sp)
        if self.peek("sense"):
            self.i += 1
            self.expect("(")
            ref = self.ref()
            self.expect(")")
            return A.sense(ref, span=sp)
        if self.peek("affect"):
            self.i += 1
            self.expect("(")
            ref = self.ref()
            self.expect(",")
            value = self.expr()
            self.expect(")")
            return A.affect(ref, value, span=sp)
        if self.peek("clamp"):
            self.i += 1
            self.expect("(")
            x = self.expr()
            self.expect(",")
            lo = self.expr()
            self.expect(",")
            hi = self.expr()
            self.expect(")")
            return A.clamp(x, lo, hi, span=sp)
        if self.peek("("):
            self.i += 1
            inner = self.expr()
            self.expect(")")
            return inner
        if self.peek("{"):
            self.i += 1
            self.enter()
            try:
                body = self.program(closing="}")
            finally:
                self.nesting -= 1
            self.expect("}")
            return body
        self.fail("expected an expression")

    def ref(self) -> A.PropRef:
        if self.peek("env") or self.peek("self"):
            scope = self.toks[self.i][1]
            self.i += 1
            self.expect(".")
            return A.PropRef(scope, self.take("ident"))
        if self.peek("struct"):
            self.i += 1
            self.expect("[")
            index = int(self.take("int"))
            self.expect("]")
            self.expect(".")
            return A.PropRef.of(index, self.take("ident"))
        self.fail("expected a property reference (env., self. or struct[i].)")


def parse(source: str, name: Optional[str] = None) -> A.Node:
    """Parse program text into an AST; raises :class:`DslError` subclasses."""
    try:
        p = _Parser(source)
        if p.toks[0][0] == "eof":
            raise DslSyntaxError("empty program", 1, 1)
        node = p.program()
        if p.toks[p.i][0] != "eof":
            p.fail("expected ';' or end of program")
        if A.depth(node) > MAX_DEPTH:
            raise DepthLimitExceeded(f"program nests deeper than {MAX_DEPTH}", 1, 1)
    except DslError as exc:
        exc.source = name
        raise
    return node


# printer -------------------------------------------------------------------

_LEVEL = {A.IF: 0, A.COMPARE: 1, A.ADD: 2, A.SUB: 2, A.MUL: 3, A.DIV: 3}


def _fmt(n: A.Node, need: int) -> str:
    k = n.kind
    if k == A.LITERAL:
        return str(n.value)
    if k == A.READ_LOCAL:
        return n.name
    if k == A.SENSE:
        return f"sense({n.ref})"
    if k == A.AFFECT:
        return f"affect({n.ref}, {_fmt(n.children[0], 0)})"
    if k == A.CLAMP:
        return "clamp(" + ", ".join(_fmt(c, 0) for c in n.children) + ")"
    if k in (A.SEQ, A.WRITE_LOCAL):
        return "{ " + _stmts(n) + " }"
    level = _LEVEL[k]
    if k == A.IF:
        c, t, e = n.children
        text = f"if {_fmt(c, 0)} then {_fmt(t, 0)} else {_fmt(e, 0)}"
    elif k == A.COMPARE:
        a, b = n.children
        text = f"{_fmt(a, 2)} {n.op} {_fmt(b, 2)}"
    else:
        a, b = n.children
        text = f"{_fmt(a, level)} {A.BINARY[k]} {_fmt(b, level + 1)}"
    return f"({text})" if level < need else text


def _stmt(n: A.Node) -> str:
    if n.kind == A.WRITE_LOCAL:
        return f"let {n.name} = {_fmt(n.children[0], 0)}"
    return _fmt(n, 0)


def _stmts(n: A.Node) -> str:
    if n.kind == A.SEQ:
        return "; ".join(_stmt(c) for c in n.children)
    return _stmt(n)


def to_source(node: A.Node) -> str:
    """Render an AST so that ``parse(to_source(ast)) == ast``."""
    if node.kind == A.SEQ:
        return ";\n".join(_stmt(c) for c in node.children) + "\n"
    return _stmt(node) + "\n"
