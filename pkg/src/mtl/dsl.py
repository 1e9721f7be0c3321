"""Textual structural-equation language.

Grammar (whitespace-insensitive, statements split on newlines or ';'):

    model  := stmt+
    stmt   := var "=" expr
    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := number | var | "(" expr ")" | func "(" expr ")"
    func   := "exp" | "ind" | "neg"
    var    := "A" | "UA" | "X" digit+ | "U" digit+

`ind(e)` is the threshold indicator (1 if e > 0 else 0); `neg(e)` is -e.
Division by zero is an evaluation error, never a parse error.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Mapping

from .errors import DslSyntaxError, EvaluationError

FUNCS = ("exp", "ind", "neg")
_VAR_RE = re.compile(r"^(A|UA|X[0-9]+|U[0-9]+)$")
_TOKEN_RE = re.compile(r"""
    (?P<num>[0-9]+(\.[0-9]*)?([eE][+-]?[0-9]+)?|\.[0-9]+([eE][+-]?[0-9]+)?)
  | (?P<ident>[A-Za-z][A-Za-z0-9]*)
  | (?P<op>[-+*/()=;])
  | (?P<ws>[ \t\r]+)
  | (?P<bad>.)
""", re.VERBOSE)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str
    lhs: "Expr"
    rhs: "Expr"


Expr = Num | Var | Call | Bin


@dataclass(frozen=True)
class _Token:
    kind: str  # num | ident | op | end
    text: str
    line: int
    col: int


def _tokenize(text: str) -> Iterator[_Token]:
    for lineno, line in enumerate(text.split("\n"), start=1):
        pos = 0
        while pos < len(line):
            m = _TOKEN_RE.match(line, pos)
            assert m is not None
            pos = m.end()
            if m.lastgroup == "ws":
                continue
            if m.lastgroup == "bad":
                raise DslSyntaxError(f"unexpected character {m.group()!r}", lineno, m.start() + 1)
            yield _Token(m.lastgroup, m.group(), lineno, m.start() + 1)
        yield _Token("op", ";", lineno, len(line) + 1)
    yield _Token("end", "", text.count("\n") + 2, 1)


class _Parser:
    def __init__(self, text: str):
        self.tokens = list(_tokenize(text))
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != op:
            raise DslSyntaxError(f"expected {op!r}, found {tok.text or 'end of input'!r}",
                                 tok.line, tok.col)
        return self.advance()

    def parse_statements(self) -> list[tuple[str, Expr, _Token]]:
        stmts = []
        while True:
            tok = self.peek()
            if tok.kind == "end":
                return stmts
            if tok.kind == "op" and tok.text == ";":
                self.advance()
                continue
            if tok.kind != "ident":
                raise DslSyntaxError(f"expected a variable name, found {tok.text!r}",
                                     tok.line, tok.col)
            name_tok = self.advance()
            if not _VAR_RE.match(name_tok.text):
                raise DslSyntaxError(f"invalid variable name {name_tok.text!r}",
                                     name_tok.line, name_tok.col)
            self.expect_op("=")
            expr = self.parse_expr()
            tok = self.peek()
            if tok.kind == "op" and tok.text == ";":
                self.advance()
            elif tok.kind != "end":
                raise DslSyntaxError(f"unexpected token {tok.text!r} after expression",
                                     tok.line, tok.col)
            stmts.append((name_tok.text, expr, name_tok))

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "+-":
                self.advance()
                node = Bin(tok.text, node, self.parse_term())
            else:
                return node

    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "*/":
                self.advance()
                node = Bin(tok.text, node, self.parse_factor())
            else:
                return node

    def parse_factor(self) -> Expr:
        tok = self.advance()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "op" and tok.text == "(":
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        if tok.kind == "ident":
            if tok.text in FUNCS:
                self.expect_op("(")
                arg = self.parse_expr()
                self.expect_op(")")
                return Call(tok.text, arg)
            if _VAR_RE.match(tok.text):
                return Var(tok.text)
            raise DslSyntaxError(f"undeclared symbol {tok.text!r}", tok.line, tok.col)
        raise DslSyntaxError(f"expected a factor, found {tok.text or 'end of input'!r}",
                             tok.line, tok.col)


def parse_expression(text: str) -> Expr:
    """Parse a single expression (no statement structure)."""
    parser = _Parser(text)
    expr = parser.parse_expr()
    tok = parser.peek()
    if not (tok.kind == "end" or (tok.kind == "op" and tok.text == ";")):
        raise DslSyntaxError(f"unexpected trailing token {tok.text!r}", tok.line, tok.col)
    return expr


def variables(expr: Expr) -> set[str]:
    if isinstance(expr, Num):
        return set()
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, Call):
        return variables(expr.arg)
    return variables(expr.lhs) | variables(expr.rhs)


def count_occurrences(expr: Expr, name: str) -> int:
    if isinstance(expr, Num):
        return 0
    if isinstance(expr, Var):
        return 1 if expr.name == name else 0
    if isinstance(expr, Call):
        return count_occurrences(expr.arg, name)
    return count_occurrences(expr.lhs, name) + count_occurrences(expr.rhs, name)


def evaluate(expr: Expr, env: Mapping[str, float]) -> float:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        try:
            return float(env[expr.name])
        except KeyError as exc:
            raise EvaluationError(f"unbound variable {expr.name!r}") from exc
    if isinstance(expr, Call):
        v = evaluate(expr.arg, env)
        if expr.func == "exp":
            try:
                return math.exp(v)
            except OverflowError as exc:
                raise EvaluationError(f"exp overflow at argument {v!r}") from exc
        if expr.func == "ind":
            return 1.0 if v > 0 else 0.0
        return -v
    lhs = evaluate(expr.lhs, env)
    rhs = evaluate(expr.rhs, env)
    if expr.op == "+":
        return lhs + rhs
    if expr.op == "-":
        return lhs - rhs
    if expr.op == "*":
        return lhs * rhs
    if rhs == 0.0:
        raise EvaluationError("division by zero")
    return lhs / rhs


def expr_to_text(expr: Expr) -> str:
    """Serialize with shape-preserving parentheses; parse(serialize(e)) == e."""
    if isinstance(expr, Num):
        v = expr.value
        return repr(int(v)) if v == int(v) and abs(v) < 1e15 else repr(v)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Call):
        return f"{expr.func}({expr_to_text(expr.arg)})"
    prec = 1 if expr.op in "+-" else 2
    lhs = expr_to_text(expr.lhs)
    rhs = expr_to_text(expr.rhs)
    if isinstance(expr.lhs, Bin) and (1 if expr.lhs.op in "+-" else 2) < prec:
        lhs = f"({lhs})"
    if isinstance(expr.rhs, Bin) and (1 if expr.rhs.op in "+-" else 2) <= prec:
        rhs = f"({rhs})"
    return f"{lhs} {expr.op} {rhs}"


# ---------------------------------------------------------------------------
# Linear extraction and mechanism classification
# ---------------------------------------------------------------------------

def linear_extract(expr: Expr) -> tuple[dict[str, float], float] | None:
    """Decompose an affine expression into ({var: coeff}, intercept); None if nonlinear."""
    if isinstance(expr, Num):
        return {}, expr.value
    if isinstance(expr, Var):
        return {expr.name: 1.0}, 0.0
    if isinstance(expr, Call):
        if expr.func != "neg":
            return None
        sub = linear_extract(expr.arg)
        if sub is None:
            return None
        coeffs, const = sub
        return {k: -v for k, v in coeffs.items()}, -const
    lhs = linear_extract(expr.lhs)
    rhs = linear_extract(expr.rhs)
    if lhs is None or rhs is None:
        return None
    (lc, lk), (rc, rk) = lhs, rhs
    if expr.op in "+-":
        sign = 1.0 if expr.op == "+" else -1.0
        coeffs = dict(lc)
        for k, v in rc.items():
            coeffs[k] = coeffs.get(k, 0.0) + sign * v
        return coeffs, lk + sign * rk
    if expr.op == "*":
        if not lc:  # constant * affine
            return {k: lk * v for k, v in rc.items()}, lk * rk
        if not rc:
            return {k: rk * v for k, v in lc.items()}, rk * lk
        return None
    # division: only by a nonzero constant stays affine
    if rc or rk == 0.0:
        return None
    return {k: v / rk for k, v in lc.items()}, lk / rk


def _noise_path(expr: Expr, noise: str) -> list[tuple[str, Expr]] | None:
    """Chain of enclosing operations from the unique noise leaf up to the root.

    Entries are (step, sibling/owner); steps: 'exp', 'neg', 'ind', 'add',
    'sub_left' (noise - other), 'sub_right' (other - noise), 'mul', 'div_num'
    (noise / other), 'div_den' (other / noise).
    """
    if isinstance(expr, Var):
        return [] if expr.name == noise else None
    if isinstance(expr, Num):
        return None
    if isinstance(expr, Call):
        sub = _noise_path(expr.arg, noise)
        return None if sub is None else sub + [(expr.func, expr)]
    in_l = count_occurrences(expr.lhs, noise) > 0
    in_r = count_occurrences(expr.rhs, noise) > 0
    if in_l == in_r:
        return None  # absent, or present on both sides
    if in_l:
        sub = _noise_path(expr.lhs, noise)
        step = {"+": ("add", expr.rhs), "-": ("sub_left", expr.rhs),
                "*": ("mul", expr.rhs), "/": ("div_num", expr.rhs)}[expr.op]
    else:
        sub = _noise_path(expr.rhs, noise)
        step = {"+": ("add", expr.lhs), "-": ("sub_right", expr.lhs),
                "*": ("mul", expr.lhs), "/": ("div_den", expr.lhs)}[expr.op]
    return None if sub is None else sub + [step]


def noise_monotonicity(expr: Expr, noise: str) -> int | None:
    """Monotone direction of expr in its (single-occurrence) noise symbol.

    Returns +1 / -1 for a statically known strict direction, 0 when the
    expression is strictly monotone given any fixed context but the direction
    depends on context (noise multiplied or divided by a noise-free factor),
    and None when strict monotonicity cannot be established structurally.
    """
    if count_occurrences(expr, noise) != 1:
        return None
    path = _noise_path(expr, noise)
    if path is None:
        return None
    direction = 1
    context_dependent = False
    for step, payload in path:
        if step in ("add",):
            continue
        if step == "sub_left":
            continue
        if step in ("neg", "sub_right"):
            direction = -direction
        elif step == "exp":
            continue
        elif step == "ind":
            return None  # not injective
        elif step == "mul":
            sibling = payload
            lin = linear_extract(sibling)
            if lin is not None and not lin[0]:  # constant multiplier
                c = lin[1]
                if c == 0.0:
                    return None
                direction = direction if c > 0 else -direction
            else:
                context_dependent = True
        elif step == "div_num":
            sibling = payload
            lin = linear_extract(sibling)
            if lin is not None and not lin[0]:
                c = lin[1]
                if c == 0.0:
                    return None
                direction = direction if c > 0 else -direction
            else:
                context_dependent = True
        elif step == "div_den":
            return None  # 1/u is not monotone across 0
        else:
            return None
    return 0 if context_dependent else direction


def classify_mechanism(expr: Expr, noise: str) -> str:
    """Structural mechanism class: linear_row | additive_noise | monotone_noise | opaque.

    linear_row: affine combination of variables with a bare unit-coefficient
    noise term.  additive_noise: h(parents) + noise with the noise appearing
    as a bare top-level additive term.  monotone_noise: the single noise
    occurrence sits under a strictly-monotone composition (unary exp/neg,
    addition of noise-free terms, multiplication/division by noise-free
    factors).  Everything else is opaque.
    """
    occurrences = count_occurrences(expr, noise)
    lin = linear_extract(expr)
    if lin is not None and occurrences == 1 and lin[0].get(noise) == 1.0:
        return "linear_row"
    if occurrences == 1 and _is_additive_noise(expr, noise):
        return "additive_noise"
    if occurrences == 1 and noise_monotonicity(expr, noise) is not None:
        return "monotone_noise"
    return "opaque"


def _is_additive_noise(expr: Expr, noise: str) -> bool:
    """True when expr = h(other vars) + noise with a bare, positively signed noise term."""
    terms = _flatten_sum(expr, 1)
    bare = [s for s, t in terms if isinstance(t, Var) and t.name == noise]
    touched = [t for _, t in terms if count_occurrences(t, noise) > 0]
    return len(bare) == 1 and bare[0] == 1 and len(touched) == 1


def _flatten_sum(expr: Expr, sign: int) -> list[tuple[int, Expr]]:
    if isinstance(expr, Bin) and expr.op in "+-":
        rhs_sign = sign if expr.op == "+" else -sign
        return _flatten_sum(expr.lhs, sign) + _flatten_sum(expr.rhs, rhs_sign)
    return [(sign, expr)]


# ---------------------------------------------------------------------------
# Statement-level parsing: text -> Scm
# ---------------------------------------------------------------------------

def parse_scm(text: str, exogenous=None, name: str = ""):
    """Parse structural-equation text into an Scm.

    One equation per endogenous node (X1..Xd contiguous, plus A).  Parent
    sets are inferred from variable references.  The noise symbol of node i
    may appear at most once; it must appear in X-node equations.  Textual
    self-references are rejected outright; cyclic self-referencing linear
    models can be built programmatically via ``mtl.scm.scm_from_equations``.
    """
    from .scm import Mechanism, Scm, _noise_symbol_for

    stmts = _Parser(text).parse_statements()
    if not stmts:
        raise DslSyntaxError("empty model", 1, 1)
    equations: dict[str, Expr] = {}
    tokens: dict[str, _Token] = {}
    for lhs, expr, tok in stmts:
        if lhs.startswith("U"):
            raise DslSyntaxError(f"cannot assign to noise symbol {lhs!r}", tok.line, tok.col)
        if lhs in equations:
            raise DslSyntaxError(f"duplicate left-hand side {lhs!r}", tok.line, tok.col)
        equations[lhs] = expr
        tokens[lhs] = tok
    x_indices = sorted(int(n[1:]) for n in equations if n != "A")
    d = max(x_indices) if x_indices else 0
    if x_indices != list(range(1, d + 1)):
        missing = sorted(set(range(1, d + 1)) - set(x_indices))
        tok = next(iter(tokens.values()))
        raise DslSyntaxError(f"missing equation for X{missing[0]}", tok.line, tok.col)
    if "A" not in equations:
        tok = next(iter(tokens.values()))
        raise DslSyntaxError("missing equation for A", tok.line, tok.col)

    declared = set(equations)
    mechanisms = {}
    for node, expr in equations.items():
        tok = tokens[node]
        noise = _noise_symbol_for(node)
        for ref in sorted(variables(expr)):
            if ref == node:
                raise DslSyntaxError(f"self-reference: {node} on its own right-hand side",
                                     tok.line, tok.col)
            if ref.startswith("U"):
                if ref != noise:
                    raise DslSyntaxError(
                        f"equation for {node} may only use its own noise {noise}, found {ref}",
                        tok.line, tok.col)
            elif ref not in declared:
                raise DslSyntaxError(f"undeclared symbol {ref!r}", tok.line, tok.col)
        count = count_occurrences(expr, noise)
        if count > 1:
            raise DslSyntaxError(f"noise symbol {noise} appears {count} times in {node}'s equation",
                                 tok.line, tok.col)
        if count == 0 and node != "A":
            raise DslSyntaxError(f"degenerate mechanism: {noise} must appear in {node}'s equation",
                                 tok.line, tok.col)
        mechanisms[node] = Mechanism(node, expr, noise)
    return Scm(d, mechanisms, dict(exogenous or {}), name)


def scm_to_text(m) -> str:
    """Serialize an Scm back to equation text (X1..Xd then A).

    Models with self-referencing equations cannot round-trip through the
    statement grammar and raise ValidationError.
    """
    from .errors import ValidationError

    lines = []
    for node in list(m.x_nodes) + ["A"]:
        mech = m.mechanisms[node]
        if node in mech.parents:
            raise ValidationError(
                f"{node} references itself; the equation grammar cannot express self-loops")
        lines.append(f"{node} = {expr_to_text(mech.body)}")
    return "\n".join(lines) + "\n"
