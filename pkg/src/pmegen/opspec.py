"""Operation descriptions: a small DSL for preconditions and postconditions.

An operation file declares its operands (kind, symbolic dimensions,
known/unknown role, structural properties) followed by the equation to
solve and the name of its solution operator::

    operation cholesky
      operand L : matrix(m,m) , unknown , lower_triangular
      operand A : matrix(m,m) , known , spd
      postcondition: L * trans(L) = A
      solve: Gamma

Comments start with ``#``.  Properties: ``lower_triangular``,
``upper_triangular``, ``symmetric``, ``spd``, ``diagonal``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Optional

from .expr import (
    Dimension,
    Equation,
    Expression,
    Inverse,
    Minus,
    OperandRef,
    Plus,
    SolvedBy,
    Times,
    Transpose,
    Zero,
    minus,
    normalize,
    operand_names,
    plus,
    times,
    trans,
    inv,
)

__all__ = [
    "Property",
    "OperandDecl",
    "OperationSpec",
    "SpecError",
    "SpecSyntaxError",
    "SpecValidationError",
    "parse_operation",
    "render_spec",
    "build_spec",
    "expr_to_text",
    "equation_to_text",
    "KIND_MATRIX",
    "KIND_VECTOR",
    "KIND_SCALAR",
    "ROLE_KNOWN",
    "ROLE_UNKNOWN",
]


class Property(str, enum.Enum):
    LOWER_TRIANGULAR = "lower_triangular"
    UPPER_TRIANGULAR = "upper_triangular"
    SYMMETRIC = "symmetric"
    SPD = "spd"
    DIAGONAL = "diagonal"
    GENERAL = "general"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


#: properties that force a square matrix and constrain partitioning
STRUCTURAL = frozenset(
    {
        Property.LOWER_TRIANGULAR,
        Property.UPPER_TRIANGULAR,
        Property.SYMMETRIC,
        Property.SPD,
        Property.DIAGONAL,
    }
)

KIND_MATRIX = "matrix"
KIND_VECTOR = "vector"
KIND_SCALAR = "scalar"
ROLE_KNOWN = "known"
ROLE_UNKNOWN = "unknown"

_IDENT = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")
_RESERVED = frozenset(
    {
        "plus", "minus", "times", "trans", "inv", "solved", "eq",
        "operation", "operand", "postcondition", "solve",
        "matrix", "vector", "scalar", "known", "unknown",
    }
) | {p.value for p in Property}


class SpecError(ValueError):
    """Base class for operation-description errors."""


class SpecSyntaxError(SpecError):
    def __init__(self, message: str, line: int, col: int = 1) -> None:
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


class SpecValidationError(SpecError):
    pass


@dataclass(frozen=True, slots=True)
class OperandDecl:
    """One declared operand.  An empty property set means general."""

    name: str
    kind: str
    dims: Dimension
    io_role: str
    properties: frozenset[Property]

    @property
    def is_input(self) -> bool:
        return self.io_role == ROLE_KNOWN

    @property
    def is_output(self) -> bool:
        return self.io_role == ROLE_UNKNOWN

    @property
    def is_structured(self) -> bool:
        return bool(self.properties & STRUCTURAL)


@dataclass(frozen=True, slots=True)
class OperationSpec:
    name: str
    operands: tuple[OperandDecl, ...]
    postcondition: Equation
    solution_operator: str

    def operand(self, name: str) -> OperandDecl:
        for d in self.operands:
            if d.name == name:
                return d
        raise KeyError(name)

    def inputs(self) -> tuple[OperandDecl, ...]:
        return tuple(d for d in self.operands if d.is_input)

    def outputs(self) -> tuple[OperandDecl, ...]:
        return tuple(d for d in self.operands if d.is_output)

    def known_names(self) -> frozenset[str]:
        return frozenset(d.name for d in self.inputs())


# ---------------------------------------------------------------------------
# validation shared by the parser and programmatic construction


def _validate_decl(decl: OperandDecl, line: int = 0) -> OperandDecl:
    def fail(msg: str) -> None:
        if line:
            raise SpecSyntaxError(msg, line)
        raise SpecValidationError(msg)

    if not _IDENT.match(decl.name) or decl.name in _RESERVED:
        fail(f"invalid operand name {decl.name!r}")
    props = set(decl.properties)
    props.discard(Property.GENERAL)
    if Property.SPD in props:
        props.add(Property.SYMMETRIC)
    exclusive = props & {
        Property.LOWER_TRIANGULAR,
        Property.UPPER_TRIANGULAR,
        Property.DIAGONAL,
    }
    if len(exclusive) > 1:
        fail(f"operand {decl.name}: conflicting shapes {sorted(p.value for p in exclusive)}")
    if props & STRUCTURAL:
        if decl.kind != KIND_MATRIX:
            fail(f"operand {decl.name}: structural properties need a matrix")
        if decl.dims.rows != decl.dims.cols:
            fail(f"operand {decl.name}: structural properties need square dimensions")
    if decl.kind == KIND_VECTOR and decl.dims.cols != "1":
        fail(f"operand {decl.name}: vectors have a single column")
    if decl.kind == KIND_SCALAR and decl.dims != Dimension("1", "1"):
        fail(f"operand {decl.name}: scalars are 1 x 1")
    return OperandDecl(decl.name, decl.kind, decl.dims, decl.io_role, frozenset(props))


def build_spec(
    name: str,
    operands: Iterable[OperandDecl],
    postcondition: Equation,
    solution_operator: str,
) -> OperationSpec:
    """Validate and assemble a spec from already-built pieces."""
    decls = tuple(_validate_decl(d) for d in operands)
    if not _IDENT.match(name):
        raise SpecValidationError(f"invalid operation name {name!r}")
    if not decls:
        raise SpecValidationError("an operation needs at least one operand")
    seen: set[str] = set()
    for d in decls:
        if d.name in seen:
            raise SpecValidationError(f"duplicate operand name {d.name}")
        seen.add(d.name)
    if not any(d.is_output for d in decls):
        raise SpecValidationError("an operation needs at least one unknown operand")
    if not _IDENT.match(solution_operator):
        raise SpecValidationError(f"invalid solution operator {solution_operator!r}")
    post = Equation(normalize(postcondition.lhs), normalize(postcondition.rhs))
    used = operand_names(post.lhs) | operand_names(post.rhs)
    for n in sorted(used):
        if n not in seen:
            raise SpecValidationError(f"operand {n} used in postcondition but not declared")
    for d in decls:
        if d.name not in used:
            raise SpecValidationError(f"operand {d.name} declared but unused")
    for side in (post.lhs, post.rhs):
        if _mentions_solved(side):
            raise SpecValidationError("postconditions may not contain solution operators")
    return OperationSpec(name, decls, post, solution_operator)


def _mentions_solved(e: Expression) -> bool:
    if isinstance(e, SolvedBy):
        return True
    if isinstance(e, Plus):
        return any(_mentions_solved(t) for t in e.terms)
    if isinstance(e, Times):
        return any(_mentions_solved(f) for f in e.factors)
    if isinstance(e, (Minus, Transpose, Inverse)):
        return _mentions_solved(e.operand)
    return False


# ---------------------------------------------------------------------------
# parser


@dataclass(frozen=True, slots=True)
class _Tok:
    text: str
    col: int


def _lex(line: str, lineno: int) -> list[_Tok]:
    toks: list[_Tok] = []
    i = 0
    while i < len(line):
        ch = line[i]
        if ch in " \t":
            i += 1
            continue
        if ch in "+-*(),=:":
            toks.append(_Tok(ch, i + 1))
            i += 1
            continue
        m = re.match(r"[A-Za-z][A-Za-z0-9_]*|1", line[i:])
        if not m:
            raise SpecSyntaxError(f"unexpected character {ch!r}", lineno, i + 1)
        toks.append(_Tok(m.group(0), i + 1))
        i += len(m.group(0))
    return toks


class _ExprParser:
    """Recursive-descent parser for postcondition expressions."""

    def __init__(self, toks: list[_Tok], lineno: int) -> None:
        self.toks = toks
        self.lineno = lineno
        self.i = 0

    def peek(self) -> Optional[_Tok]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self) -> _Tok:
        t = self.peek()
        if t is None:
            raise SpecSyntaxError("unexpected end of expression", self.lineno)
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.take()
        if t.text != text:
            raise SpecSyntaxError(f"expected {text!r}, found {t.text!r}", self.lineno, t.col)
        return t

    def expression(self) -> Expression:
        terms = [self.term()]
        while (t := self.peek()) is not None and t.text in "+-":
            self.take()
            nxt = self.term()
            terms.append(minus(normalize(nxt)) if t.text == "-" else nxt)
        return plus(*(normalize(t) for t in terms))

    def term(self) -> Expression:
        factors = [self.factor()]
        while (t := self.peek()) is not None and t.text == "*":
            self.take()
            factors.append(self.factor())
        return times(*(normalize(f) for f in factors))

    def factor(self) -> Expression:
        t = self.take()
        if t.text == "-":
            return minus(normalize(self.factor()))
        if t.text == "(":
            e = self.expression()
            self.expect(")")
            return e
        if t.text in ("trans", "inv"):
            self.expect("(")
            e = self.expression()
            self.expect(")")
            return trans(normalize(e)) if t.text == "trans" else inv(normalize(e))
        if _IDENT.match(t.text) and t.text not in _RESERVED:
            return OperandRef(t.text)
        raise SpecSyntaxError(f"unexpected token {t.text!r} in expression", self.lineno, t.col)


def _parse_operand_line(toks: list[_Tok], lineno: int) -> OperandDecl:
    p = _ExprParser(toks, lineno)
    p.expect("operand")
    name_tok = p.take()
    name = name_tok.text
    p.expect(":")
    kind_tok = p.take()
    kind = kind_tok.text
    def dim_token() -> str:
        t = p.take()
        if not _IDENT.match(t.text) or t.text in _RESERVED:
            raise SpecSyntaxError(f"expected a size symbol, found {t.text!r}", lineno, t.col)
        return t.text

    if kind == KIND_MATRIX:
        p.expect("(")
        rows = dim_token()
        p.expect(",")
        cols = dim_token()
        p.expect(")")
        dims = Dimension(rows, cols)
    elif kind == KIND_VECTOR:
        p.expect("(")
        rows = dim_token()
        p.expect(")")
        dims = Dimension(rows, "1")
    elif kind == KIND_SCALAR:
        dims = Dimension("1", "1")
    else:
        raise SpecSyntaxError(
            f"expected matrix/vector/scalar, found {kind!r}", lineno, kind_tok.col
        )
    p.expect(",")
    role_tok = p.take()
    if role_tok.text not in (ROLE_KNOWN, ROLE_UNKNOWN):
        raise SpecSyntaxError(
            f"expected known or unknown, found {role_tok.text!r}", lineno, role_tok.col
        )
    props: set[Property] = set()
    while p.peek() is not None:
        p.expect(",")
        prop_tok = p.take()
        try:
            prop = Property(prop_tok.text)
        except ValueError:
            raise SpecSyntaxError(
                f"unknown property {prop_tok.text!r}", lineno, prop_tok.col
            ) from None
        if prop is Property.GENERAL:
            raise SpecSyntaxError("general is implied by omitting properties", lineno, prop_tok.col)
        props.add(prop)
    decl = OperandDecl(name, kind, dims, role_tok.text, frozenset(props))
    return _validate_decl(decl, lineno)


def parse_operation(text: str) -> OperationSpec:
    """Parse one operation description; raises SpecError with positions."""
    name: Optional[str] = None
    operands: list[OperandDecl] = []
    post: Optional[Equation] = None
    post_line = 0
    solve: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        toks = _lex(line, lineno)
        head = toks[0].text
        if head == "operation":
            if name is not None:
                raise SpecSyntaxError("duplicate operation line", lineno)
            if len(toks) != 2:
                raise SpecSyntaxError("expected: operation <name>", lineno)
            name = toks[1].text
        elif head == "operand":
            if post is not None:
                raise SpecSyntaxError("operands must precede the postcondition", lineno)
            operands.append(_parse_operand_line(toks, lineno))
        elif head == "postcondition":
            if len(toks) < 2 or toks[1].text != ":":
                raise SpecSyntaxError("expected: postcondition: <expr> = <expr>", lineno)
            p = _ExprParser(toks[2:], lineno)
            lhs = p.expression()
            p.expect("=")
            rhs = p.expression()
            if p.peek() is not None:
                t = p.peek()
                raise SpecSyntaxError(f"trailing input {t.text!r}", lineno, t.col)
            post = Equation(lhs, rhs)
            post_line = lineno
        elif head == "solve":
            if len(toks) != 3 or toks[1].text != ":":
                raise SpecSyntaxError("expected: solve: <OperatorName>", lineno)
            solve = toks[2].text
        else:
            raise SpecSyntaxError(f"unexpected line starting with {head!r}", lineno)
    if name is None:
        raise SpecSyntaxError("missing operation line", 1)
    if post is None:
        raise SpecSyntaxError("missing postcondition", 1)
    if solve is None:
        raise SpecSyntaxError("missing solve line", 1)
    try:
        return build_spec(name, operands, post, solve)
    except SpecValidationError as exc:
        raise SpecSyntaxError(str(exc), post_line) from exc


# ---------------------------------------------------------------------------
# rendering


def expr_to_text(e: Expression) -> str:
    """Infix rendering; sums print positive terms before negated ones."""
    if isinstance(e, OperandRef):
        return e.name
    if isinstance(e, Zero):
        return "0"
    if isinstance(e, SolvedBy):
        return f"{e.operator_name}({', '.join(expr_to_text(a) for a in e.arguments)})"
    if isinstance(e, Transpose):
        return f"trans({expr_to_text(e.operand)})"
    if isinstance(e, Inverse):
        return f"inv({expr_to_text(e.operand)})"
    if isinstance(e, Minus):
        return "-" + _factor_text(e.operand)
    if isinstance(e, Times):
        return " * ".join(_factor_text(f) for f in e.factors)
    if isinstance(e, Plus):
        pos = [t for t in e.terms if not isinstance(t, Minus)]
        neg = [t.operand for t in e.terms if isinstance(t, Minus)]
        parts = [expr_to_text(t) for t in pos]
        head = " + ".join(parts) if parts else "-" + expr_to_text(neg.pop(0))
        return head + "".join(" - " + expr_to_text(t) for t in neg)
    raise SpecValidationError(f"cannot render node {type(e).__name__}")


def _factor_text(e: Expression) -> str:
    text = expr_to_text(e)
    return f"({text})" if isinstance(e, (Plus, Minus)) else text


def equation_to_text(eq: Equation) -> str:
    return f"{expr_to_text(eq.lhs)} = {expr_to_text(eq.rhs)}"


def render_spec(spec: OperationSpec) -> str:
    """Emit DSL text; parsing it back yields an equal spec."""
    if not spec.operands:
        raise SpecValidationError("refusing to render a spec without operands")
    lines = [f"operation {spec.name}"]
    for d in spec.operands:
        if d.kind == KIND_MATRIX:
            kind = f"matrix({d.dims.rows},{d.dims.cols})"
        elif d.kind == KIND_VECTOR:
            kind = f"vector({d.dims.rows})"
        else:
            kind = "scalar"
        props = "".join(f" , {p.value}" for p in sorted(d.properties, key=lambda p: p.value))
        lines.append(f"  operand {d.name} : {kind} , {d.io_role}{props}")
    lines.append(f"  postcondition: {equation_to_text(spec.postcondition)}")
    lines.append(f"  solve: {spec.solution_operator}")
    return "\n".join(lines) + "\n"
