"""Immutable symbolic matrix expressions and a deterministic normal form.

Expressions are built from operand references, a zero block, n-ary sums,
n-ary non-commutative products, unary negation, transposition, formal
inversion, and applications of solution operators (``Gamma``, ``Omega``,
...).  :func:`normalize` rewrites any well-formed tree into a canonical
form whose prefix serialization is unique: two normalized expressions are
structurally equal exactly when their serializations are byte-equal.

The normal form is produced by smart constructors (:func:`plus`,
:func:`times`, :func:`minus`, :func:`trans`, :func:`inv`) that assume
normalized children and keep the following invariants:

* sums and products are flat, sums are sorted by serialization and free
  of cancelling ``x`` / ``-x`` pairs and of zero terms;
* unary minus never wraps a minus, never sits inside a product and is
  distributed over sums;
* no ``trans(trans(x))``, ``trans`` of a sum or product, ``inv(inv(x))``
  or ``inv(trans(x))`` remains (the canonical order is transpose outside
  inverse);
* products containing a zero block collapse to zero.

A grouped inverse such as ``inv(L * trans(L))`` is deliberately left
alone by :func:`normalize`; expanding or contracting product inverses is
the job of the bounded rewriter :func:`rewrite_with`, which also uses
solved equations as ground rewrite rules.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

__all__ = [
    "Expression",
    "OperandRef",
    "Zero",
    "ZERO",
    "Plus",
    "Times",
    "Minus",
    "Transpose",
    "Inverse",
    "SolvedBy",
    "Equation",
    "Dimension",
    "StructuralError",
    "normalize",
    "normalize_equation",
    "is_normalized",
    "plus",
    "times",
    "minus",
    "trans",
    "inv",
    "solved_by",
    "ref",
    "serialize",
    "serialize_equation",
    "parse_prefix",
    "parse_prefix_equation",
    "operand_names",
    "additive_terms",
    "has_unknown",
    "known_only",
    "to_canonical_equation",
    "is_tautology_candidate",
    "transpose_equation",
    "contains_subterm",
    "replace_all",
    "rewrite_candidates",
    "rewrite_with",
]

_IDENT = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")
_RESERVED = frozenset({"plus", "minus", "times", "trans", "inv", "solved", "eq"})


class StructuralError(ValueError):
    """A node was built with the wrong arity or a malformed child."""


class Expression:
    """Base class for expression nodes; all instances are immutable."""

    __slots__ = ()


def _check_child(e: object) -> None:
    if not isinstance(e, Expression):
        raise StructuralError(f"expected an Expression, got {type(e).__name__}")


@dataclass(frozen=True, slots=True)
class OperandRef(Expression):
    """Reference to a named operand or block (``A``, ``L_TL``)."""

    name: str

    def __post_init__(self) -> None:
        if not _IDENT.match(self.name) or self.name in _RESERVED:
            raise StructuralError(f"invalid operand name: {self.name!r}")


@dataclass(frozen=True, slots=True)
class Zero(Expression):
    """The zero block; its dimensions are implied by context."""


ZERO = Zero()


@dataclass(frozen=True, slots=True)
class Plus(Expression):
    """Flat n-ary sum, at least two terms, no direct Plus children."""

    terms: tuple[Expression, ...]

    def __post_init__(self) -> None:
        if len(self.terms) < 2:
            raise StructuralError("Plus needs at least two terms")
        for t in self.terms:
            _check_child(t)
            if isinstance(t, Plus):
                raise StructuralError("Plus may not contain a direct Plus child")


@dataclass(frozen=True, slots=True)
class Times(Expression):
    """Flat ordered n-ary product; matrix product is non-commutative."""

    factors: tuple[Expression, ...]

    def __post_init__(self) -> None:
        if len(self.factors) < 2:
            raise StructuralError("Times needs at least two factors")
        for f in self.factors:
            _check_child(f)
            if isinstance(f, Times):
                raise StructuralError("Times may not contain a direct Times child")


@dataclass(frozen=True, slots=True)
class Minus(Expression):
    """Unary negation."""

    operand: Expression

    def __post_init__(self) -> None:
        _check_child(self.operand)


@dataclass(frozen=True, slots=True)
class Transpose(Expression):
    operand: Expression

    def __post_init__(self) -> None:
        _check_child(self.operand)


@dataclass(frozen=True, slots=True)
class Inverse(Expression):
    """Formal inverse; no invertibility check happens at this layer."""

    operand: Expression

    def __post_init__(self) -> None:
        _check_child(self.operand)


@dataclass(frozen=True, slots=True)
class SolvedBy(Expression):
    """Application of a solution operator, e.g. ``Gamma(A_TL)``."""

    operator_name: str
    arguments: tuple[Expression, ...]

    def __post_init__(self) -> None:
        if not _IDENT.match(self.operator_name):
            raise StructuralError(f"invalid operator name: {self.operator_name!r}")
        if not self.arguments:
            raise StructuralError("SolvedBy needs at least one argument")
        for a in self.arguments:
            _check_child(a)


@dataclass(frozen=True, slots=True)
class Equation:
    lhs: Expression
    rhs: Expression

    def __post_init__(self) -> None:
        _check_child(self.lhs)
        _check_child(self.rhs)


@dataclass(frozen=True, slots=True)
class Dimension:
    """Symbolic dimensions; sizes are identifiers, ``1``, or ``a-b``."""

    rows: str
    cols: str


def ref(name: str) -> OperandRef:
    return OperandRef(name)


# ---------------------------------------------------------------------------
# serialization


@lru_cache(maxsize=None)
def serialize(e: Expression) -> str:
    """Parenthesized prefix form; unique on normalized expressions."""
    if isinstance(e, OperandRef):
        return e.name
    if isinstance(e, Zero):
        return "0"
    if isinstance(e, Plus):
        return "(plus " + " ".join(serialize(t) for t in e.terms) + ")"
    if isinstance(e, Times):
        return "(times " + " ".join(serialize(f) for f in e.factors) + ")"
    if isinstance(e, Minus):
        return "(minus " + serialize(e.operand) + ")"
    if isinstance(e, Transpose):
        return "(trans " + serialize(e.operand) + ")"
    if isinstance(e, Inverse):
        return "(inv " + serialize(e.operand) + ")"
    if isinstance(e, SolvedBy):
        return (
            "(solved "
            + e.operator_name
            + " "
            + " ".join(serialize(a) for a in e.arguments)
            + ")"
        )
    raise StructuralError(f"unknown node type: {type(e).__name__}")


def serialize_equation(eq: Equation) -> str:
    return f"(eq {serialize(eq.lhs)} {serialize(eq.rhs)})"


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def _tokens(text: str) -> list[str]:
    return _TOKEN.findall(text)


def _read(toks: list[str], i: int) -> tuple[Expression, int]:
    if i >= len(toks):
        raise StructuralError("unexpected end of prefix form")
    t = toks[i]
    if t == ")":
        raise StructuralError("unexpected ')' in prefix form")
    if t != "(":
        if t == "0":
            return ZERO, i + 1
        return OperandRef(t), i + 1
    head = toks[i + 1] if i + 1 < len(toks) else None
    i += 2
    args: list[Expression] = []
    if head == "solved":
        if i >= len(toks) or toks[i] in ("(", ")"):
            raise StructuralError("solved needs an operator name")
        op_name = toks[i]
        i += 1
    elif head not in ("plus", "minus", "times", "trans", "inv"):
        raise StructuralError(f"unknown prefix head: {head!r}")
    while i < len(toks) and toks[i] != ")":
        node, i = _read(toks, i)
        args.append(node)
    if i >= len(toks):
        raise StructuralError("missing ')' in prefix form")
    i += 1
    if head == "plus":
        return Plus(tuple(args)), i
    if head == "times":
        return Times(tuple(args)), i
    if head == "minus":
        if len(args) != 1:
            raise StructuralError("minus takes exactly one argument")
        return Minus(args[0]), i
    if head == "trans":
        if len(args) != 1:
            raise StructuralError("trans takes exactly one argument")
        return Transpose(args[0]), i
    if head == "inv":
        if len(args) != 1:
            raise StructuralError("inv takes exactly one argument")
        return Inverse(args[0]), i
    return SolvedBy(op_name, tuple(args)), i


def parse_prefix(text: str) -> Expression:
    """Read an expression back from its prefix form."""
    toks = _tokens(text)
    node, i = _read(toks, 0)
    if i != len(toks):
        raise StructuralError("trailing tokens after prefix expression")
    return node


def parse_prefix_equation(text: str) -> Equation:
    toks = _tokens(text)
    if len(toks) < 4 or toks[0] != "(" or toks[1] != "eq":
        raise StructuralError("expected '(eq lhs rhs)'")
    lhs, i = _read(toks, 2)
    rhs, i = _read(toks, i)
    if i != len(toks) - 1 or toks[i] != ")":
        raise StructuralError("malformed '(eq ...)' form")
    return Equation(lhs, rhs)


# ---------------------------------------------------------------------------
# smart constructors (assume normalized inputs, produce normalized output)


def plus(*terms: Expression) -> Expression:
    flat: list[Expression] = []
    for t in terms:
        if isinstance(t, Plus):
            flat.extend(t.terms)
        elif not isinstance(t, Zero):
            flat.append(t)
    # cancel matching positive/negative occurrences of the same core term
    order: list[str] = []
    pos: dict[str, list[Expression]] = {}
    neg: dict[str, list[Expression]] = {}
    for t in flat:
        core = t.operand if isinstance(t, Minus) else t
        key = serialize(core)
        if key not in pos:
            order.append(key)
            pos[key] = []
            neg[key] = []
        (neg if isinstance(t, Minus) else pos)[key].append(core)
    survivors: list[Expression] = []
    for key in order:
        n = len(pos[key]) - len(neg[key])
        core = (pos[key] or neg[key])[0]
        if n > 0:
            survivors.extend([core] * n)
        elif n < 0:
            survivors.extend([Minus(core)] * (-n))
    survivors.sort(key=serialize)
    if not survivors:
        return ZERO
    if len(survivors) == 1:
        return survivors[0]
    return Plus(tuple(survivors))


def times(*factors: Expression) -> Expression:
    flat: list[Expression] = []
    negative = False
    stack = list(factors)
    stack.reverse()
    while stack:
        f = stack.pop()
        while isinstance(f, Minus):
            negative = not negative
            f = f.operand
        if isinstance(f, Zero):
            return ZERO
        if isinstance(f, Times):
            stack.extend(reversed(f.factors))
        else:
            flat.append(f)
    if not flat:
        raise StructuralError("times needs at least one factor")
    result: Expression = flat[0] if len(flat) == 1 else Times(tuple(flat))
    return minus(result) if negative else result


def minus(e: Expression) -> Expression:
    if isinstance(e, Zero):
        return ZERO
    if isinstance(e, Minus):
        return e.operand
    if isinstance(e, Plus):
        return plus(*(minus(t) for t in e.terms))
    return Minus(e)


def trans(e: Expression) -> Expression:
    if isinstance(e, Zero):
        return ZERO
    if isinstance(e, Transpose):
        return e.operand
    if isinstance(e, Times):
        return times(*(trans(f) for f in reversed(e.factors)))
    if isinstance(e, Plus):
        return plus(*(trans(t) for t in e.terms))
    if isinstance(e, Minus):
        return minus(trans(e.operand))
    return Transpose(e)


def inv(e: Expression) -> Expression:
    if isinstance(e, Inverse):
        return e.operand
    if isinstance(e, Transpose):
        return trans(inv(e.operand))
    if isinstance(e, Minus):
        return minus(inv(e.operand))
    return Inverse(e)


def solved_by(operator_name: str, arguments: Sequence[Expression]) -> SolvedBy:
    return SolvedBy(operator_name, tuple(arguments))


def normalize(e: Expression) -> Expression:
    """Rewrite ``e`` bottom-up to the canonical form (idempotent)."""
    if isinstance(e, (OperandRef, Zero)):
        return e
    if isinstance(e, Plus):
        return plus(*(normalize(t) for t in e.terms))
    if isinstance(e, Times):
        return times(*(normalize(f) for f in e.factors))
    if isinstance(e, Minus):
        return minus(normalize(e.operand))
    if isinstance(e, Transpose):
        return trans(normalize(e.operand))
    if isinstance(e, Inverse):
        return inv(normalize(e.operand))
    if isinstance(e, SolvedBy):
        return SolvedBy(e.operator_name, tuple(normalize(a) for a in e.arguments))
    raise StructuralError(f"unknown node type: {type(e).__name__}")


def normalize_equation(eq: Equation) -> Equation:
    return Equation(normalize(eq.lhs), normalize(eq.rhs))


def is_normalized(e: Expression) -> bool:
    return normalize(e) == e


# ---------------------------------------------------------------------------
# queries


def operand_names(e: Expression) -> frozenset[str]:
    """All operand/block names referenced anywhere in ``e``."""
    out: set[str] = set()
    _collect_names(e, out)
    return frozenset(out)


def _collect_names(e: Expression, out: set[str]) -> None:
    if isinstance(e, OperandRef):
        out.add(e.name)
    elif isinstance(e, Plus):
        for t in e.terms:
            _collect_names(t, out)
    elif isinstance(e, Times):
        for f in e.factors:
            _collect_names(f, out)
    elif isinstance(e, (Minus, Transpose, Inverse)):
        _collect_names(e.operand, out)
    elif isinstance(e, SolvedBy):
        for a in e.arguments:
            _collect_names(a, out)


def additive_terms(e: Expression) -> tuple[Expression, ...]:
    """Top-level summands of a normalized expression (zero has none)."""
    if isinstance(e, Plus):
        return e.terms
    if isinstance(e, Zero):
        return ()
    return (e,)


def has_unknown(e: Expression, known: frozenset[str] | set[str]) -> bool:
    return any(name not in known for name in operand_names(e))


def known_only(e: Expression, known: frozenset[str] | set[str]) -> bool:
    return not has_unknown(e, known)


def is_tautology_candidate(eq: Equation, known: frozenset[str] | set[str]) -> bool:
    """True when no side of the equation mentions an unknown operand."""
    return known_only(eq.lhs, known) and known_only(eq.rhs, known)


def to_canonical_equation(eq: Equation, known: frozenset[str] | set[str]) -> Equation:
    """Move terms across ``=`` so unknowns sit left and knowns right.

    Terms only change side with a sign flip, so the solution set is
    preserved.  An equation without any unknown operand is returned
    unchanged (a tautology candidate, see :func:`is_tautology_candidate`);
    a single term mixing unknown and known factors legally stays on the
    left.  When every left-hand term ends up negated, both sides are
    negated once more so the leading side reads positively.
    """
    lhs = normalize(eq.lhs)
    rhs = normalize(eq.rhs)
    new_l: list[Expression] = []
    new_r: list[Expression] = []
    for t in additive_terms(lhs):
        if has_unknown(t, known):
            new_l.append(t)
        else:
            new_r.append(minus(t))
    for t in additive_terms(rhs):
        if has_unknown(t, known):
            new_l.append(minus(t))
        else:
            new_r.append(t)
    if not new_l:
        return Equation(lhs, rhs)
    if all(isinstance(t, Minus) for t in new_l):
        new_l = [minus(t) for t in new_l]
        new_r = [minus(t) for t in new_r]
    return Equation(plus(*new_l), plus(*new_r))


def transpose_equation(eq: Equation) -> Equation:
    """Transpose both sides (used for redundancy detection)."""
    return Equation(trans(normalize(eq.lhs)), trans(normalize(eq.rhs)))


# ---------------------------------------------------------------------------
# ground rewriting


def contains_subterm(e: Expression, target: Expression) -> bool:
    if e == target:
        return True
    if isinstance(e, Plus):
        return any(contains_subterm(t, target) for t in e.terms)
    if isinstance(e, Times):
        return any(contains_subterm(f, target) for f in e.factors)
    if isinstance(e, (Minus, Transpose, Inverse)):
        return contains_subterm(e.operand, target)
    if isinstance(e, SolvedBy):
        return any(contains_subterm(a, target) for a in e.arguments)
    return False


def replace_all(e: Expression, target: Expression, replacement: Expression) -> Expression:
    """Replace every occurrence of ``target``; result is renormalized."""
    if e == target:
        return replacement
    if isinstance(e, Plus):
        return plus(*(replace_all(t, target, replacement) for t in e.terms))
    if isinstance(e, Times):
        return times(*(replace_all(f, target, replacement) for f in e.factors))
    if isinstance(e, Minus):
        return minus(replace_all(e.operand, target, replacement))
    if isinstance(e, Transpose):
        return trans(replace_all(e.operand, target, replacement))
    if isinstance(e, Inverse):
        return inv(replace_all(e.operand, target, replacement))
    if isinstance(e, SolvedBy):
        return SolvedBy(
            e.operator_name,
            tuple(replace_all(a, target, replacement) for a in e.arguments),
        )
    return e


def _uninvert(e: Expression) -> Optional[Expression]:
    """Return ``x`` with ``e == inv(x)`` when that shape is recognizable."""
    if isinstance(e, Inverse):
        return e.operand
    if isinstance(e, Transpose) and isinstance(e.operand, Inverse):
        return trans(e.operand.operand)
    return None


def _local_variants(e: Expression) -> list[Expression]:
    """Inverse-group moves available at this node (not in children)."""
    out: list[Expression] = []
    if isinstance(e, Times):
        fs = e.factors
        for i in range(len(fs) - 1):
            a, b = fs[i], fs[i + 1]
            ua, ub = _uninvert(a), _uninvert(b)
            if ua is not None and ub is not None:
                # inv(x)·inv(y) contracts to inv(y·x)
                merged = inv(times(ub, ua))
                out.append(times(*fs[:i], merged, *fs[i + 2 :]))
            if inv(a) == b:
                rest = fs[:i] + fs[i + 2 :]
                if len(rest) == 1:
                    out.append(rest[0])
                elif rest:
                    out.append(times(*rest))
    if isinstance(e, Inverse) and isinstance(e.operand, Times):
        out.append(times(*(inv(f) for f in reversed(e.operand.factors))))
    return out


def _positional_variants(e: Expression) -> list[Expression]:
    out = list(_local_variants(e))
    if isinstance(e, Plus):
        for i, t in enumerate(e.terms):
            for v in _positional_variants(t):
                out.append(plus(*e.terms[:i], v, *e.terms[i + 1 :]))
    elif isinstance(e, Times):
        for i, f in enumerate(e.factors):
            for v in _positional_variants(f):
                out.append(times(*e.factors[:i], v, *e.factors[i + 1 :]))
    elif isinstance(e, Minus):
        out.extend(minus(v) for v in _positional_variants(e.operand))
    elif isinstance(e, Transpose):
        out.extend(trans(v) for v in _positional_variants(e.operand))
    elif isinstance(e, Inverse):
        out.extend(inv(v) for v in _positional_variants(e.operand))
    elif isinstance(e, SolvedBy):
        for i, a in enumerate(e.arguments):
            for v in _positional_variants(a):
                out.append(
                    SolvedBy(
                        e.operator_name,
                        e.arguments[:i] + (v,) + e.arguments[i + 1 :],
                    )
                )
    return out


def rewrite_candidates(e: Expression, rules: Sequence[Equation]) -> list[Expression]:
    """All distinct one-step rewrites of ``e``, in deterministic order.

    A step is either a ground replacement of every occurrence of one rule
    side by the other (both orientations), or one inverse-group move:
    contraction of adjacent inverses, expansion of an inverted product,
    or cancellation of an adjacent ``x``/``inv(x)`` pair.
    """
    seen = {serialize(e)}
    out: list[Expression] = []
    for rule in rules:
        for frm, to in ((rule.lhs, rule.rhs), (rule.rhs, rule.lhs)):
            if frm == to:
                continue
            cand = replace_all(e, frm, to)
            key = serialize(cand)
            if key not in seen:
                seen.add(key)
                out.append(cand)
    for cand in _positional_variants(e):
        key = serialize(cand)
        if key not in seen:
            seen.add(key)
            out.append(cand)
    return out


def rewrite_with(e: Expression, rules: Sequence[Equation], max_depth: int) -> Expression:
    """Greedy bounded rewriting; each step takes the first unseen candidate.

    Mostly useful for single-step transcripts; search-style proving sits
    on top of :func:`rewrite_candidates` instead.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    cur = normalize(e)
    seen = {serialize(cur)}
    for _ in range(max_depth):
        for cand in rewrite_candidates(cur, rules):
            key = serialize(cand)
            if key not in seen:
                seen.add(key)
                cur = cand
                break
        else:
            break
    return cur
