"""A small expression language for metrics, spray coefficients, levels and maps.

Grammar (loosest binding first)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' exponent)?          exponent: optionally signed integer
    atom    := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Power binds tighter than unary minus, so ``-x1^2`` is ``-(x1^2)``.  Variables
are ``x1..xn`` and ``y1..yn``; ``pi`` is the only named constant.  Parsed trees
are immutable and evaluate over floats, numpy arrays or jets.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

from . import jets
from .errors import DescentLabError


class DSLError(DescentLabError, ValueError):
    pass


class ParseError(DSLError):
    def __init__(self, message, line, col):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class UnboundVariableError(DSLError, KeyError):
    def __str__(self):
        return self.args[0]


FUNCTIONS: dict[str, tuple[int, Callable]] = {
    "sqrt": (1, jets.sqrt),
    "sin": (1, jets.sin),
    "cos": (1, jets.cos),
    "tan": (1, jets.tan),
    "exp": (1, jets.exp),
    "log": (1, jets.log),
    "atan2": (2, jets.atan2),
}
CONSTANTS = {"pi": math.pi}
_VAR = re.compile(r"([xy])([1-9][0-9]*)$")


# -- tree ------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str

    @property
    def kind(self) -> str:
        return self.name[0]

    @property
    def index(self) -> int:
        return int(self.name[1:])


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Pow, Call]


# -- tokenizer -------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+) |
    (?P<nl>\n) |
    (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?) |
    (?P<name>[A-Za-z_][A-Za-z_0-9]*) |
    (?P<op>[-+*/^(),])
""", re.VERBOSE)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, source: str):
        self.toks = _tokenize(source)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        if tok.kind == "eof":
            message = f"{message} (unexpected end of input)"
        raise ParseError(message, tok.line, tok.col)

    def expect(self, text):
        tok = self.peek()
        if tok.text != text or tok.kind == "eof":
            self.error(f"expected {text!r}")
        return self.next()

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek().kind != "eof":
            self.error(f"unexpected token {self.peek().text!r}")
        return e

    def expr(self):
        left = self.term()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = self.next().text
            left = BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.peek().text in ("*", "/") and self.peek().kind == "op":
            op = self.next().text
            left = BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.peek().text == "-" and self.peek().kind == "op":
            self.next()
            return Neg(self.unary())
        if self.peek().text == "+" and self.peek().kind == "op":
            self.next()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().text == "^":
            self.next()
            return Pow(base, self.exponent())
        return base

    def exponent(self) -> int:
        tok = self.peek()
        sign = 1
        paren = False
        if tok.text == "(":
            paren = True
            self.next()
            tok = self.peek()
        if tok.text in ("-", "+"):
            sign = -1 if tok.text == "-" else 1
            self.next()
            tok = self.peek()
        if tok.kind != "num" or not tok.text.isdigit():
            self.error("exponent must be an integer literal")
        self.next()
        if paren:
            self.expect(")")
        return sign * int(tok.text)

    def atom(self):
        tok = self.peek()
        if tok.kind == "num":
            self.next()
            return Num(float(tok.text))
        if tok.kind == "name":
            self.next()
            if self.peek().text == "(":
                if tok.text not in FUNCTIONS:
                    self.error(f"unknown function {tok.text!r}", tok)
                self.next()
                args = [self.expr()]
                while self.peek().text == ",":
                    self.next()
                    args.append(self.expr())
                self.expect(")")
                arity = FUNCTIONS[tok.text][0]
                if len(args) != arity:
                    self.error(f"{tok.text} expects {arity} argument(s), got {len(args)}", tok)
                return Call(tok.text, tuple(args))
            if tok.text in CONSTANTS:
                return Num(CONSTANTS[tok.text])
            if _VAR.match(tok.text):
                return Var(tok.text)
            self.error(f"unknown identifier {tok.text!r}", tok)
        if tok.text == "(":
            self.next()
            e = self.expr()
            self.expect(")")
            return e
        self.error("expected a number, variable, call or '('")


def parse(source: str) -> Expr:
    """Parse ``source`` into an expression tree; raises :class:`ParseError`."""
    return _Parser(source).parse()


def to_source(e: Expr) -> str:
    """Fully parenthesized source text; ``parse(to_source(e)) == e``."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_source(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, Pow):
        return f"({to_source(e.base)}^({e.exponent}))"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_source(a) for a in e.args)})"
    raise TypeError(f"not an expression: {e!r}")


def variables(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Neg):
        return variables(e.operand)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Pow):
        return variables(e.base)
    if isinstance(e, Call):
        out = set()
        for a in e.args:
            out |= variables(a)
        return out
    return set()


# -- evaluation ------------------------------------------------------------

def _add(a, b):
    return a + b


def _sub(a, b):
    return a - b


def _mul(a, b):
    return a * b


_BINARY = {"+": _add, "-": _sub, "*": _mul, "/": jets.div}


@functools.lru_cache(maxsize=None)
def compile_expr(e: Expr) -> Callable[[Mapping], object]:
    """Turn a tree into a closure ``env -> value``."""
    if isinstance(e, Num):
        c = e.value
        return lambda env: c
    if isinstance(e, Var):
        name = e.name

        def var(env):
            try:
                return env[name]
            except KeyError:
                raise UnboundVariableError(f"unbound variable {name}") from None
        return var
    if isinstance(e, Neg):
        f = compile_expr(e.operand)
        return lambda env: -f(env)
    if isinstance(e, BinOp):
        op = _BINARY[e.op]
        fl, fr = compile_expr(e.left), compile_expr(e.right)
        return lambda env: op(fl(env), fr(env))
    if isinstance(e, Pow):
        fb, n = compile_expr(e.base), e.exponent
        return lambda env: jets.ipow(fb(env), n)
    if isinstance(e, Call):
        fn = FUNCTIONS[e.func][1]
        fargs = [compile_expr(a) for a in e.args]
        if len(fargs) == 1:
            f0 = fargs[0]
            return lambda env: fn(f0(env))
        return lambda env: fn(*(f(env) for f in fargs))
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e: Expr | str, env: Mapping):
    """Evaluate over reals, arrays or jets.  Raises :class:`DomainError` or
    :class:`UnboundVariableError`."""
    if isinstance(e, str):
        e = parse(e)
    return compile_expr(e)(env)


def make_env(x: Sequence, y: Sequence | None = None) -> dict:
    env = {f"x{i + 1}": v for i, v in enumerate(x)}
    if y is not None:
        env.update({f"y{i + 1}": v for i, v in enumerate(y)})
    return env


# -- bundles ---------------------------------------------------------------

ROLES = ("metric", "spray", "map", "base-map", "transition", "level")


def entry_names(role: str, dim: int) -> list[str]:
    if role == "metric":
        return [f"g{i}{j}" for i in range(1, dim + 1) for j in range(i, dim + 1)]
    if role == "spray":
        return [f"G{i}" for i in range(1, dim + 1)]
    if role == "map":
        return [f"F{i}" for i in range(1, 2 * dim + 1)]
    if role in ("base-map", "transition"):
        return [f"f{i}" for i in range(1, dim + 1)]
    if role == "level":
        return ["h"]
    raise ValueError(f"unknown role {role!r}")


def _allowed_kinds(role):
    return {"x", "y"} if role in ("spray", "map") else {"x"}


@dataclass(frozen=True)
class ExprBundle:
    """Named expressions playing one role (metric, spray, map, ...)."""

    role: str
    dim: int
    entries: tuple  # tuple of (name, Expr)

    @classmethod
    def from_sources(cls, role: str, dim: int, sources) -> "ExprBundle":
        """Build from a mapping name -> source, or a list ordered like
        :func:`entry_names`.  Raises on any diagnostic."""
        bundle, diags = _build(role, dim, sources)
        if diags:
            raise DSLError("; ".join(diags))
        return bundle

    def __getitem__(self, name) -> Expr:
        return dict(self.entries)[name]

    def names(self):
        return [n for n, _ in self.entries]

    def compiled(self) -> list[Callable]:
        order = entry_names(self.role, self.dim)
        d = dict(self.entries)
        return [compile_expr(d[n]) for n in order]

    def as_function(self) -> Callable:
        """A coordinate map ``coords -> list`` for roles whose inputs are
        ``x`` (and ``y`` for maps/sprays, passed concatenated)."""
        fs = self.compiled()
        n = self.dim
        if self.role == "metric":
            idx = {name: k for k, name in enumerate(entry_names("metric", n))}

            def metric(x):
                env = make_env(x)
                vals = [f(env) for f in fs]
                return [[vals[idx[f"g{min(i, j) + 1}{max(i, j) + 1}"]] for j in range(n)]
                        for i in range(n)]
            return metric
        if self.role in ("spray",):
            def spray(x, y):
                env = make_env(x, y)
                return [f(env) for f in fs]
            return spray
        if self.role == "map":
            def bundle_map(coords):
                env = make_env(coords[:n], coords[n:2 * n])
                return [f(env) for f in fs]
            return bundle_map
        if self.role == "level":
            f0 = fs[0]
            return lambda x: f0(make_env(x))

        def base_map(x):
            env = make_env(x)
            return [f(env) for f in fs]
        return base_map


def _build(role, dim, sources):
    diags: list[str] = []
    names = entry_names(role, dim)
    if isinstance(sources, (list, tuple)):
        if len(sources) != len(names):
            diags.append(f"arity mismatch: {role} of dim {dim} needs {len(names)} entries, "
                         f"got {len(sources)}")
            sources = dict(zip(names, sources))
        else:
            sources = dict(zip(names, sources))
    entries = []
    for name in names:
        if name not in sources:
            diags.append(f"missing entry {name}")
    for name, src in sources.items():
        if name not in names:
            hint = " (metric stores i <= j only)" if role == "metric" else ""
            diags.append(f"unexpected entry {name}{hint}")
            continue
        if not isinstance(src, (str, Num, Var, Neg, BinOp, Pow, Call)):
            diags.append(f"{name}: expression must be a string, got {type(src).__name__}")
            continue
        try:
            e = parse(src) if isinstance(src, str) else src
        except ParseError as exc:
            diags.append(f"{name}: syntax error at {exc.line}:{exc.col}: {exc.message}")
            continue
        for v in sorted(variables(e)):
            kind, idx = v[0], int(v[1:])
            if kind not in _allowed_kinds(role):
                diags.append(f"{name}: variable {v} not allowed for role {role}")
            elif idx > dim:
                diags.append(f"{name}: variable out of range: {v}")
        if role == "spray" and not any(v.startswith("y") for v in variables(e)):
            if not (isinstance(e, Num) and e.value == 0.0):
                diags.append(f"{name}: spray coefficient does not depend on y")
        entries.append((name, e))
    order = {n: k for k, n in enumerate(names)}
    entries.sort(key=lambda t: order[t[0]])
    return ExprBundle(role, dim, tuple(entries)), diags


def validate(sources, role: str, dim: int) -> list[str]:
    """Check arity, variable ranges and role-specific structure.

    Returns a list of diagnostics (empty when the bundle is ok); never raises.
    """
    if role not in ROLES:
        return [f"unknown role {role!r}"]
    if not isinstance(dim, int) or dim < 1:
        return [f"invalid dimension {dim!r}"]
    if isinstance(sources, ExprBundle):
        sources = dict(sources.entries)
    if not isinstance(sources, (dict, list, tuple)):
        return ["bundle must be a mapping or a list of expressions"]
    try:
        return _build(role, dim, sources)[1]
    except Exception as exc:  # validate never throws
        return [f"invalid bundle: {exc}"]
