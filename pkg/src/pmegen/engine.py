"""Pattern knowledge base and the iterative derivation of PMEs.

A pattern is the machine form of an operation description: a template
equation over operand slots, the knownness and properties each slot
requires, and a solved form that expresses the output slot in terms of
the inputs.  The knowledge base starts from a hard-coded set of
elementary solvers (assignment, additive isolation, general and
triangular system solves, transposition, scalar division) and grows by
learning the pattern of every operation whose PME has been derived.

Deriving a PME iterates three actions over the grid of quadrant
equations: structural pattern matching, flagging the matched outputs as
known, and re-canonicalizing the remaining equations.  The operation's
own pattern is registered in a working copy of the knowledge base first,
so sub-problems of the operation's own kind are recognized immediately.

Property guards are discharged in two ways.  Triangularity, symmetry and
diagonality come from direct block inheritance plus a small structural
closure (sums, negation, transpose flips, zero blocks).  Definiteness is
proved by :func:`prove_spd`, a bounded breadth-first search that rewrites
with the tautologies collected so far (both orientations), contracts and
expands product inverses, cancels adjacent inverse pairs, and meets in
the middle between the query expression and the known SPD facts.
"""

from __future__ import annotations

import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .binding import NoViablePartitioningsError, RuleCombination, enumerate_combinations
from .blockarith import (
    STATUS_SOLVED,
    STATUS_UNSOLVED,
    BlockedEquationGrid,
    QuadrantEquation,
    blocked_operands,
    blocked_postcondition,
    position_names,
)
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
    is_tautology_candidate,
    known_only,
    normalize,
    normalize_equation,
    operand_names,
    parse_prefix_equation,
    plus,
    minus,
    inv,
    trans,
    times,
    ref,
    rewrite_candidates,
    serialize,
    serialize_equation,
    solved_by,
    to_canonical_equation,
)
from .opspec import (
    KIND_MATRIX,
    KIND_SCALAR,
    OperationSpec,
    Property,
    ROLE_KNOWN,
    ROLE_UNKNOWN,
    STRUCTURAL,
    parse_operation,
)
from .partition import BlockedOperand, PropertyFact, inheritance_facts, spd_facts

__all__ = [
    "PatternSlot",
    "Pattern",
    "KnowledgeBase",
    "MatchResult",
    "DerivationState",
    "TraceStep",
    "PME",
    "StuckDerivation",
    "AllCombinationsStuck",
    "PatternConflictError",
    "KnowledgeBaseError",
    "seed_builtins",
    "pattern_from_spec",
    "match_equation",
    "prove_spd",
    "derive_pme",
    "derive_all",
    "learn",
    "load_kb",
    "save_kb",
    "initial_state",
]

_IDENT = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")

SPD_SEARCH_DEPTH = 8
SPD_SEARCH_NODES = 4000
NESTED_DEPTH_LIMIT = 3


class PatternConflictError(ValueError):
    pass


class KnowledgeBaseError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class PatternSlot:
    """One operand slot of a pattern.

    ``dims`` records the slot's symbolic shape; shared symbols across
    slots express the dimension relations the precondition imposes
    (a factorization's operands are all square of one size, a solve's
    right-hand side agrees with its system, and so on).
    """

    name: str
    kind: str
    io_role: str
    properties: frozenset[Property]
    dims: Optional[Dimension] = None
    require_square: bool = False


@dataclass(frozen=True, slots=True)
class Pattern:
    name: str
    solution_operator: Optional[str]
    slots: tuple[PatternSlot, ...]
    template: Equation
    solved: Equation
    provenance: str

    def slot(self, name: str) -> PatternSlot:
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    def signature(self) -> tuple:
        return (
            self.name,
            self.solution_operator,
            self.slots,
            serialize_equation(self.template),
            serialize_equation(self.solved),
        )


def pattern_from_spec(spec: OperationSpec, provenance: str) -> Pattern:
    """The learnable pattern of an operation.

    The template is the canonical postcondition; the solved form applies
    the solution operator to the inputs in declaration order.
    """
    slots = tuple(
        PatternSlot(d.name, d.kind, d.io_role, d.properties, d.dims)
        for d in spec.operands
    )
    template = to_canonical_equation(spec.postcondition, spec.known_names())
    outputs = spec.outputs()
    if len(outputs) != 1:
        raise PatternConflictError(
            f"operation {spec.name}: patterns need exactly one unknown operand"
        )
    solved = Equation(
        OperandRef(outputs[0].name),
        solved_by(spec.solution_operator, [OperandRef(d.name) for d in spec.inputs()]),
    )
    return Pattern(spec.name, spec.solution_operator, slots, template, solved, provenance)


# ---------------------------------------------------------------------------
# builtin patterns


def _slot(
    name: str,
    io_role: str,
    dims: Optional[tuple[str, str]] = None,
    kind: str = KIND_MATRIX,
    props: Iterable[Property] = (),
    square: bool = False,
) -> PatternSlot:
    return PatternSlot(
        name,
        kind,
        io_role,
        frozenset(props),
        Dimension(*dims) if dims else None,
        square,
    )


def _builtin(
    name: str,
    slots: Sequence[PatternSlot],
    template: Equation,
    solved: Equation,
) -> Pattern:
    return Pattern(
        name=name,
        solution_operator=None,
        slots=tuple(slots),
        template=normalize_equation(template),
        solved=normalize_equation(solved),
        provenance="builtin",
    )


def _seed_patterns() -> tuple[Pattern, ...]:
    X, E, F, B = ref("X"), ref("E"), ref("F"), ref("B")
    A, L, U = ref("A"), ref("L"), ref("U")
    a, x, b = ref("s"), ref("x"), ref("t")
    lower = (Property.LOWER_TRIANGULAR,)
    upper = (Property.UPPER_TRIANGULAR,)
    out = [
        _builtin(
            "assign",
            [_slot("X", ROLE_UNKNOWN, ("q", "n")), _slot("E", ROLE_KNOWN, ("q", "n"))],
            Equation(X, E),
            Equation(X, E),
        ),
        _builtin(
            "add_isolate",
            [
                _slot("X", ROLE_UNKNOWN, ("q", "n")),
                _slot("E", ROLE_KNOWN, ("q", "n")),
                _slot("F", ROLE_KNOWN, ("q", "n")),
            ],
            Equation(Plus((X, E)), F),
            Equation(X, plus(F, minus(E))),
        ),
        _builtin(
            "solve_left",
            [
                _slot("A", ROLE_KNOWN, ("q", "q"), props=(Property.GENERAL,), square=True),
                _slot("X", ROLE_UNKNOWN, ("q", "n")),
                _slot("B", ROLE_KNOWN, ("q", "n")),
            ],
            Equation(times(A, X), B),
            Equation(X, times(inv(A), B)),
        ),
        _builtin(
            "solve_right",
            [
                _slot("A", ROLE_KNOWN, ("n", "n"), props=(Property.GENERAL,), square=True),
                _slot("X", ROLE_UNKNOWN, ("q", "n")),
                _slot("B", ROLE_KNOWN, ("q", "n")),
            ],
            Equation(times(X, A), B),
            Equation(X, times(B, inv(A))),
        ),
    ]
    trsm_forms = [
        ("trsm_lx", L, lower, ("q", "q"), times(L, X), times(inv(L), B)),
        ("trsm_xlt", L, lower, ("n", "n"), times(X, trans(L)), times(B, trans(inv(L)))),
        ("trsm_ux", U, upper, ("q", "q"), times(U, X), times(inv(U), B)),
        ("trsm_xu", U, upper, ("n", "n"), times(X, U), times(B, inv(U))),
        ("trsm_ltx", L, lower, ("q", "q"), times(trans(L), X), times(trans(inv(L)), B)),
        ("trsm_xl", L, lower, ("n", "n"), times(X, L), times(B, inv(L))),
        ("trsm_utx", U, upper, ("q", "q"), times(trans(U), X), times(trans(inv(U)), B)),
        ("trsm_xut", U, upper, ("n", "n"), times(X, trans(U)), times(B, trans(inv(U)))),
    ]
    for bname, tri, props, tri_dims, lhs, solved_rhs in trsm_forms:
        out.append(
            _builtin(
                bname,
                [
                    _slot(tri.name, ROLE_KNOWN, tri_dims, props=props),
                    _slot("X", ROLE_UNKNOWN, ("q", "n")),
                    _slot("B", ROLE_KNOWN, ("q", "n")),
                ],
                Equation(lhs, B),
                Equation(X, solved_rhs),
            )
        )
    out.append(
        _builtin(
            "transpose_solve",
            [_slot("X", ROLE_UNKNOWN, ("q", "n")), _slot("E", ROLE_KNOWN, ("n", "q"))],
            Equation(trans(X), E),
            Equation(X, trans(E)),
        )
    )
    out.append(
        _builtin(
            "scalar_div",
            [
                _slot("s", ROLE_KNOWN, ("1", "1"), kind=KIND_SCALAR),
                _slot("x", ROLE_UNKNOWN, ("1", "1"), kind=KIND_SCALAR),
                _slot("t", ROLE_KNOWN, ("1", "1"), kind=KIND_SCALAR),
            ],
            Equation(times(a, x), b),
            Equation(x, times(inv(a), b)),
        )
    )
    return tuple(out)


@dataclass(frozen=True, slots=True)
class KnowledgeBase:
    """Immutable pattern store: fixed builtins plus learned patterns."""

    builtins: tuple[Pattern, ...]
    learned: tuple[Pattern, ...] = ()

    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.builtins + self.learned)

    def get(self, name: str) -> Optional[Pattern]:
        for p in self.builtins + self.learned:
            if p.name == name:
                return p
        return None

    def match_order(self) -> tuple[Pattern, ...]:
        """Learned patterns first, most recent first, then builtins."""
        return tuple(reversed(self.learned)) + self.builtins

    def with_learned(self, pattern: Pattern) -> "KnowledgeBase":
        return replace(self, learned=self.learned + (pattern,))

    def without_builtins(self, names: Iterable[str]) -> "KnowledgeBase":
        """Drop builtins by exact name or family prefix (``trsm``)."""
        drop = tuple(names)
        keep = tuple(
            p
            for p in self.builtins
            if not any(p.name == n or p.name.startswith(n + "_") for n in drop)
        )
        return replace(self, builtins=keep)


def seed_builtins() -> KnowledgeBase:
    """A fresh knowledge base holding only the elementary solvers."""
    return KnowledgeBase(builtins=_seed_patterns())


def learn(spec: OperationSpec, kb: KnowledgeBase) -> KnowledgeBase:
    """Extend the knowledge base with the operation's own pattern.

    Learning the same pattern twice is a no-op; redefining a name with a
    different template is an error.
    """
    pattern = pattern_from_spec(spec, provenance=f"learned-from:{spec.name}")
    existing = kb.get(pattern.name)
    if existing is not None:
        if existing.signature() == pattern.signature():
            return kb
        raise PatternConflictError(
            f"pattern {pattern.name} already exists with a different definition"
        )
    return kb.with_learned(pattern)


# ---------------------------------------------------------------------------
# structural matching


def _match_expr(tpl: Expression, sub: Expression, binds: dict[str, Expression]) -> bool:
    if isinstance(tpl, OperandRef):
        if tpl.name in binds:
            return binds[tpl.name] == sub
        binds[tpl.name] = sub
        return True
    if isinstance(tpl, Zero):
        return isinstance(sub, Zero)
    if isinstance(tpl, Minus):
        return isinstance(sub, Minus) and _match_expr(tpl.operand, sub.operand, binds)
    if isinstance(tpl, Transpose):
        return isinstance(sub, Transpose) and _match_expr(tpl.operand, sub.operand, binds)
    if isinstance(tpl, Inverse):
        return isinstance(sub, Inverse) and _match_expr(tpl.operand, sub.operand, binds)
    if isinstance(tpl, Times):
        if not isinstance(sub, Times) or len(tpl.factors) != len(sub.factors):
            return False
        snapshot = dict(binds)
        for t, s in zip(tpl.factors, sub.factors):
            if not _match_expr(t, s, binds):
                binds.clear()
                binds.update(snapshot)
                return False
        return True
    if isinstance(tpl, Plus):
        if not isinstance(sub, Plus) or len(tpl.terms) != len(sub.terms):
            return False
        return _match_terms(list(tpl.terms), list(sub.terms), binds)
    if isinstance(tpl, SolvedBy):
        if not isinstance(sub, SolvedBy) or tpl.operator_name != sub.operator_name:
            return False
        if len(tpl.arguments) != len(sub.arguments):
            return False
        snapshot = dict(binds)
        for t, s in zip(tpl.arguments, sub.arguments):
            if not _match_expr(t, s, binds):
                binds.clear()
                binds.update(snapshot)
                return False
        return True
    return False


def _match_terms(
    tpl_terms: list[Expression],
    sub_terms: list[Expression],
    binds: dict[str, Expression],
) -> bool:
    """Match sum terms up to permutation (canonical sorting renames freely)."""
    if not tpl_terms:
        return not sub_terms
    head = tpl_terms[0]
    for i, s in enumerate(sub_terms):
        snapshot = dict(binds)
        if _match_expr(head, s, binds) and _match_terms(
            tpl_terms[1:], sub_terms[:i] + sub_terms[i + 1 :], binds
        ):
            return True
        binds.clear()
        binds.update(snapshot)
    return False


def _match_equation_shape(
    template: Equation, subject: Equation
) -> Optional[dict[str, Expression]]:
    binds: dict[str, Expression] = {}
    if _match_expr(template.lhs, subject.lhs, binds) and _match_expr(
        template.rhs, subject.rhs, binds
    ):
        return binds
    return None


# ---------------------------------------------------------------------------
# derivation state and guards


@dataclass(frozen=True, slots=True)
class TraceStep:
    step: int
    position: str
    pattern: str
    outputs: tuple[str, ...]
    known_count: int


@dataclass
class DerivationState:
    """Mutable working state of one PME derivation."""

    spec: OperationSpec
    combination: RuleCombination
    grid: BlockedEquationGrid
    blocked: dict[str, BlockedOperand]
    known: set[str]
    facts: list[PropertyFact]
    tautologies: list[Equation]
    dims: dict[str, Dimension]
    trace: list[TraceStep] = field(default_factory=list)

    def fact_holds(self, e: Expression, prop: Property) -> bool:
        key = serialize(normalize(e))
        return any(
            f.property is prop and serialize(f.expression) == key for f in self.facts
        )


def initial_state(
    spec: OperationSpec, rules: RuleCombination, grid: Optional[BlockedEquationGrid] = None
) -> DerivationState:
    blocked = blocked_operands(spec, rules)
    if grid is None:
        grid = blocked_postcondition(spec, rules)
    known: set[str] = set()
    facts: list[PropertyFact] = []
    dims: dict[str, Dimension] = {}
    for decl in spec.operands:
        b = blocked[decl.name]
        facts.extend(inheritance_facts(b))
        if Property.SPD in decl.properties:
            for f in spd_facts(b):
                if not any(
                    g.property is f.property and g.expression == f.expression
                    for g in facts
                ):
                    facts.append(f)
        dims.update(b.block_dims())
        if decl.is_input:
            for row in b.cells:
                for cell in row:
                    known |= operand_names(cell)
    return DerivationState(
        spec=spec,
        combination=rules,
        grid=grid,
        blocked=blocked,
        known=known,
        facts=facts,
        tautologies=[],
        dims=dims,
    )


def _dims_of(e: Expression, dims: dict[str, Dimension]) -> Optional[Dimension]:
    if isinstance(e, OperandRef):
        return dims.get(e.name)
    if isinstance(e, (Minus, Inverse)):
        return _dims_of(e.operand, dims)
    if isinstance(e, Transpose):
        d = _dims_of(e.operand, dims)
        return Dimension(d.cols, d.rows) if d else None
    if isinstance(e, Times):
        first = _dims_of(e.factors[0], dims)
        last = _dims_of(e.factors[-1], dims)
        if first and last:
            return Dimension(first.rows, last.cols)
        return None
    if isinstance(e, Plus):
        for t in e.terms:
            d = _dims_of(t, dims)
            if d:
                return d
    return None


def _established(e: Expression, prop: Property, state: DerivationState) -> bool:
    """Structural property propagation: facts, zero blocks, sums, transpose."""
    if state.fact_holds(e, prop):
        return True
    implied_by = {
        Property.SYMMETRIC: (Property.SPD, Property.DIAGONAL),
        Property.LOWER_TRIANGULAR: (Property.DIAGONAL,),
        Property.UPPER_TRIANGULAR: (Property.DIAGONAL,),
    }
    for stronger in implied_by.get(prop, ()):
        if state.fact_holds(e, stronger):
            return True
    if prop is Property.SYMMETRIC and trans(normalize(e)) == normalize(e):
        return True
    if isinstance(e, Zero):
        return prop in (
            Property.LOWER_TRIANGULAR,
            Property.UPPER_TRIANGULAR,
            Property.SYMMETRIC,
            Property.DIAGONAL,
        )
    if isinstance(e, Minus) and prop is not Property.SPD:
        return _established(e.operand, prop, state)
    if isinstance(e, Plus) and prop is not Property.SPD:
        return all(_established(t, prop, state) for t in e.terms)
    if isinstance(e, Transpose):
        flip = {
            Property.LOWER_TRIANGULAR: Property.UPPER_TRIANGULAR,
            Property.UPPER_TRIANGULAR: Property.LOWER_TRIANGULAR,
            Property.SYMMETRIC: Property.SYMMETRIC,
            Property.DIAGONAL: Property.DIAGONAL,
            Property.SPD: Property.SPD,
        }
        return _established(e.operand, flip[prop], state)
    return False


def _is_plain_general(e: Expression, state: DerivationState) -> bool:
    """A bare block reference with no structural property on record."""
    if not isinstance(e, OperandRef):
        return False
    return not any(
        f.property in STRUCTURAL
        and isinstance(f.expression, OperandRef)
        and f.expression.name == e.name
        for f in state.facts
    )


@dataclass(frozen=True, slots=True)
class MatchResult:
    pattern: Pattern
    bindings: tuple[tuple[str, Expression], ...]
    solved: Equation
    outputs: tuple[str, ...]

    def binding_map(self) -> dict[str, Expression]:
        return dict(self.bindings)


class GuardFailure(Exception):
    """Internal: records why a structurally matching pattern was rejected."""

    def __init__(self, note: str) -> None:
        super().__init__(note)
        self.note = note


def _unify_slot_dims(
    pattern: Pattern, binds: dict[str, Expression], state: DerivationState
) -> None:
    """Bind the pattern's size symbols against the subject's block sizes.

    A slot whose bound expression has no determinable dimensions (a bare
    zero block, say) contributes no constraints; everything else must be
    explainable by one consistent assignment of pattern symbols.
    """
    assignment: dict[str, str] = {}
    for slot in pattern.slots:
        if slot.dims is None:
            continue
        bound = binds.get(slot.name)
        if bound is None:
            continue
        actual = _dims_of(bound, state.dims)
        if actual is None:
            continue
        for symbol, size in ((slot.dims.rows, actual.rows), (slot.dims.cols, actual.cols)):
            if symbol == "1":
                if size != "1":
                    raise GuardFailure(
                        f"slot {slot.name} must have a fixed size-1 axis, got {size}"
                    )
                continue
            if assignment.setdefault(symbol, size) != size:
                raise GuardFailure(
                    f"slot {slot.name}: size {symbol} would need to be both "
                    f"{assignment[symbol]} and {size}"
                )


def _check_guards(
    pattern: Pattern, binds: dict[str, Expression], state: DerivationState
) -> None:
    outputs_seen: set[str] = set()
    _unify_slot_dims(pattern, binds, state)
    for slot in pattern.slots:
        bound = binds.get(slot.name)
        if bound is None:
            raise GuardFailure(f"slot {slot.name} unbound")
        if slot.io_role == ROLE_UNKNOWN:
            if not isinstance(bound, OperandRef):
                raise GuardFailure(
                    f"slot {slot.name} must bind a single unknown block"
                )
            if bound.name in state.known:
                raise GuardFailure(f"{bound.name} is already known")
            if bound.name in outputs_seen:
                raise GuardFailure(f"{bound.name} bound to two output slots")
            outputs_seen.add(bound.name)
        else:
            if not known_only(bound, state.known):
                raise GuardFailure(
                    f"slot {slot.name} binds unknown quantities "
                    f"({serialize(bound)})"
                )
        d = _dims_of(bound, state.dims)
        if slot.kind == KIND_SCALAR and (d is None or d != Dimension("1", "1")):
            raise GuardFailure(f"slot {slot.name} must bind a scalar")
        if slot.require_square and (d is None or d.rows != d.cols):
            raise GuardFailure(f"slot {slot.name} must bind a square quantity")
        for prop in sorted(slot.properties, key=lambda p: p.value):
            if prop is Property.GENERAL:
                if not _is_plain_general(bound, state):
                    raise GuardFailure(
                        f"slot {slot.name} needs an unstructured block, "
                        f"got {serialize(bound)}"
                    )
            elif prop is Property.SPD:
                if not prove_spd(bound, state):
                    raise GuardFailure(
                        f"could not establish spd({serialize(bound)})"
                    )
            elif not _established(bound, prop, state):
                raise GuardFailure(
                    f"could not establish {prop.value}({serialize(bound)})"
                )


def match_equation(
    eq: QuadrantEquation,
    patterns: Sequence[Pattern] | KnowledgeBase,
    state: DerivationState,
    notes: Optional[list[str]] = None,
) -> Optional[MatchResult]:
    """First pattern that matches the equation and passes all guards.

    ``patterns`` may be a knowledge base (tried in learned-recent-first
    order) or an explicit ordered sequence.  Guard failures of patterns
    that matched structurally are appended to ``notes`` when given.
    """
    if isinstance(patterns, KnowledgeBase):
        patterns = patterns.match_order()
    for pattern in patterns:
        binds = _match_equation_shape(pattern.template, eq.equation)
        if binds is None:
            continue
        try:
            _check_guards(pattern, binds, state)
        except GuardFailure as g:
            if notes is not None:
                notes.append(f"{eq.position}: pattern {pattern.name}: {g.note}")
            continue
        solved = Equation(
            _substitute(pattern.solved.lhs, binds),
            _substitute(pattern.solved.rhs, binds),
        )
        solved = normalize_equation(solved)
        outputs = tuple(
            sorted(
                binds[s.name].name  # type: ignore[union-attr]
                for s in pattern.slots
                if s.io_role == ROLE_UNKNOWN
            )
        )
        return MatchResult(
            pattern=pattern,
            bindings=tuple(sorted(binds.items())),
            solved=solved,
            outputs=outputs,
        )
    return None


def _substitute(e: Expression, binds: dict[str, Expression]) -> Expression:
    if isinstance(e, OperandRef):
        return binds.get(e.name, e)
    if isinstance(e, Plus):
        return plus(*(_substitute(t, binds) for t in e.terms))
    if isinstance(e, Times):
        return times(*(_substitute(f, binds) for f in e.factors))
    if isinstance(e, Minus):
        return minus(_substitute(e.operand, binds))
    if isinstance(e, Transpose):
        return trans(_substitute(e.operand, binds))
    if isinstance(e, Inverse):
        return inv(_substitute(e.operand, binds))
    if isinstance(e, SolvedBy):
        return SolvedBy(
            e.operator_name, tuple(_substitute(a, binds) for a in e.arguments)
        )
    return e


# ---------------------------------------------------------------------------
# spd proving


def prove_spd(
    e: Expression,
    state: DerivationState,
    max_depth: int = SPD_SEARCH_DEPTH,
    max_nodes: int = SPD_SEARCH_NODES,
) -> bool:
    """Bounded equational search for membership in the SPD fact set.

    Returns False when no proof is found within the bounds; that is a
    failure to establish the property, never a disproof.
    """
    targets = [
        normalize(f.expression) for f in state.facts if f.property is Property.SPD
    ]
    if not targets:
        return False
    start = normalize(e)
    start_key = serialize(start)
    target_keys = {serialize(t) for t in targets}
    if start_key in target_keys:
        return True
    rules = list(state.tautologies)
    fwd_seen: set[str] = {start_key}
    bwd_seen: set[str] = set(target_keys)
    fwd_frontier: list[Expression] = [start]
    bwd_frontier: list[Expression] = list(targets)
    for _ in range(max_depth):
        if not fwd_frontier and not bwd_frontier:
            break
        fwd_frontier = _expand(fwd_frontier, rules, fwd_seen, max_nodes)
        if any(serialize(x) in bwd_seen for x in fwd_frontier):
            return True
        bwd_frontier = _expand(bwd_frontier, rules, bwd_seen, max_nodes)
        if any(serialize(x) in fwd_seen for x in bwd_frontier):
            return True
    return False


def _expand(
    frontier: list[Expression],
    rules: list[Equation],
    seen: set[str],
    max_nodes: int,
) -> list[Expression]:
    out: list[Expression] = []
    for node in frontier:
        if len(seen) >= max_nodes:
            break
        for cand in rewrite_candidates(node, rules):
            key = serialize(cand)
            if key not in seen:
                seen.add(key)
                out.append(cand)
    return out


# ---------------------------------------------------------------------------
# derivation


class StuckDerivation(Exception):
    """No unsolved quadrant matched anything in a full sweep."""

    def __init__(
        self,
        operation: str,
        combination: RuleCombination,
        unsolved: Sequence[QuadrantEquation],
        notes: Sequence[str],
    ) -> None:
        self.operation = operation
        self.combination = combination
        self.unsolved = tuple(unsolved)
        self.notes = tuple(notes)
        positions = ", ".join(q.position for q in self.unsolved)
        super().__init__(
            f"operation {operation}, combination {combination.index}: "
            f"stuck with unsolved quadrant(s) {positions}"
        )


class AllCombinationsStuck(Exception):
    def __init__(self, operation: str, failures: Sequence[StuckDerivation]) -> None:
        self.operation = operation
        self.failures = tuple(failures)
        super().__init__(
            f"operation {operation}: every combination got stuck "
            f"({len(self.failures)} total)"
        )


@dataclass(frozen=True, slots=True)
class PME:
    """A fully solved grid: each output block expressed over known inputs."""

    operation: str
    combination: RuleCombination
    row_sizes: tuple[str, ...]
    col_sizes: tuple[str, ...]
    cells: tuple[tuple[QuadrantEquation, ...], ...]
    order: tuple[str, ...]
    trace: tuple[TraceStep, ...] = field(compare=False, default=())

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.row_sizes), len(self.col_sizes))

    def cell(self, position: str) -> QuadrantEquation:
        for row in self.cells:
            for q in row:
                if q.position == position:
                    return q
        raise KeyError(position)

    def all_cells(self) -> tuple[QuadrantEquation, ...]:
        return tuple(q for row in self.cells for q in row)

    def assignments(self) -> tuple[QuadrantEquation, ...]:
        return tuple(self.cell(pos) for pos in self.order)


def _ops_dir_specs(ops_dir: Optional[str]) -> list[OperationSpec]:
    if not ops_dir or not os.path.isdir(ops_dir):
        return []
    specs = []
    for fname in sorted(os.listdir(ops_dir)):
        if not fname.endswith(".op"):
            continue
        with open(os.path.join(ops_dir, fname), "r", encoding="utf-8") as fh:
            specs.append(parse_operation(fh.read()))
    return specs


def derive_pme(
    spec: OperationSpec,
    rules: RuleCombination,
    kb: KnowledgeBase,
    ops_dir: Optional[str] = None,
    _depth: int = 0,
) -> PME:
    """Derive the PME for one rule combination.

    The operation's own pattern is registered first in a working copy of
    the knowledge base, so the derivation can bootstrap sub-problems of
    its own kind.  When an equation matches nothing and an operations
    directory is given, operation files there are tried as nested
    derivations; a pattern acquired that way is used immediately.
    """
    state = initial_state(spec, rules)
    patterns: list[Pattern] = [pattern_from_spec(spec, provenance="self")]
    patterns.extend(kb.match_order())
    cells: dict[str, QuadrantEquation] = {
        q.position: q for q in state.grid.all_cells()
    }
    scan = state.grid.scan_positions()
    order: list[str] = []
    tried_nested: set[str] = set()
    step = 0

    while True:
        unsolved = [p for p in scan if cells[p].status == STATUS_UNSOLVED]
        if not unsolved:
            break
        progressed = False
        notes: list[str] = []
        for pos in unsolved:
            q = cells[pos]
            if is_tautology_candidate(q.equation, state.known):
                if normalize(q.equation.lhs) == normalize(q.equation.rhs):
                    cells[pos] = replace(q, status=STATUS_SOLVED)
                    progressed = True
                    break
                notes.append(
                    f"{pos}: no unknowns left but sides differ "
                    f"({serialize_equation(q.equation)})"
                )
                continue
            result = match_equation(q, patterns, state, notes)
            if result is None:
                continue
            step += 1
            solved_cell = QuadrantEquation(pos, result.solved, STATUS_SOLVED)
            cells[pos] = solved_cell
            order.append(pos)
            state.known.update(result.outputs)
            # both the identity the quadrant now encodes and its solved
            # form feed later rewriting
            for taut in (q.equation, result.solved):
                if taut not in state.tautologies:
                    state.tautologies.append(taut)
            state.trace.append(
                TraceStep(
                    step=step,
                    position=pos,
                    pattern=result.pattern.name,
                    outputs=result.outputs,
                    known_count=len(state.known),
                )
            )
            for other in scan:
                oq = cells[other]
                if oq.status == STATUS_UNSOLVED:
                    cells[other] = replace(
                        oq,
                        equation=to_canonical_equation(oq.equation, state.known),
                    )
            progressed = True
            break
        if progressed:
            continue
        acquired = _try_nested(
            spec, kb, ops_dir, _depth, cells, scan, state, patterns, tried_nested
        )
        if acquired:
            continue
        raise StuckDerivation(
            spec.name,
            rules,
            [cells[p] for p in scan if cells[p].status == STATUS_UNSOLVED],
            notes,
        )

    nr, nc = state.grid.shape
    names = position_names(nr, nc)
    grid_cells = tuple(
        tuple(cells[names[i][j]] for j in range(nc)) for i in range(nr)
    )
    return PME(
        operation=spec.name,
        combination=rules,
        row_sizes=state.grid.row_sizes,
        col_sizes=state.grid.col_sizes,
        cells=grid_cells,
        order=tuple(order),
        trace=tuple(state.trace),
    )


def _try_nested(
    spec: OperationSpec,
    kb: KnowledgeBase,
    ops_dir: Optional[str],
    depth: int,
    cells: dict[str, QuadrantEquation],
    scan: Sequence[str],
    state: DerivationState,
    patterns: list[Pattern],
    tried: set[str],
) -> bool:
    """Acquire a pattern from the operations directory for a stuck equation."""
    if not ops_dir or depth >= NESTED_DEPTH_LIMIT:
        return False
    candidates = [
        c
        for c in _ops_dir_specs(ops_dir)
        if c.name != spec.name and c.name not in tried and kb.get(c.name) is None
    ]
    for pos in scan:
        q = cells[pos]
        if q.status != STATUS_UNSOLVED:
            continue
        for cand in candidates:
            pattern = pattern_from_spec(cand, provenance=f"learned-from:{cand.name}")
            if match_equation(q, [pattern], state) is None:
                continue
            tried.add(cand.name)
            try:
                derive_all(cand, kb, ops_dir=ops_dir, _depth=depth + 1)
            except (StuckDerivation, AllCombinationsStuck, NoViablePartitioningsError):
                continue
            patterns.insert(0, pattern)
            return True
    return False


def derive_all(
    spec: OperationSpec,
    kb: KnowledgeBase,
    ops_dir: Optional[str] = None,
    _depth: int = 0,
) -> tuple[PME, ...]:
    """Run the whole pipeline and return one PME per solvable combination.

    Raises :class:`AllCombinationsStuck` when no combination at all can
    be completed.
    """
    combinations = enumerate_combinations(spec)
    pmes: list[PME] = []
    failures: list[StuckDerivation] = []
    for combo in combinations:
        try:
            pmes.append(derive_pme(spec, combo, kb, ops_dir=ops_dir, _depth=_depth))
        except StuckDerivation as exc:
            failures.append(exc)
    if not pmes:
        raise AllCombinationsStuck(spec.name, failures)
    return tuple(pmes)


# ---------------------------------------------------------------------------
# knowledge-base persistence


def save_kb(kb: KnowledgeBase, path: str) -> None:
    """Write learned patterns as one record each; the write is atomic."""
    lines = ["# pattern knowledge base"]
    for p in kb.learned:
        lines.append(f"pattern {p.name}")
        lines.append(f"provenance {p.provenance}")
        lines.append(f"solve {p.solution_operator or '-'}")
        for s in p.slots:
            dims = f"{s.dims.rows} {s.dims.cols}" if s.dims else "- -"
            props = " ".join(sorted(q.value for q in s.properties))
            suffix = f" {props}" if props else ""
            lines.append(f"slot {s.name} {s.kind} {s.io_role} {dims}{suffix}")
        lines.append(f"post {serialize_equation(p.template)}")
        lines.append(f"solved {serialize_equation(p.solved)}")
        lines.append("end")
    text = "\n".join(lines) + "\n"
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".kb-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_kb(path: Optional[str]) -> KnowledgeBase:
    """Builtins plus the learned patterns stored at ``path`` (if any)."""
    kb = seed_builtins()
    if not path or not os.path.exists(path):
        return kb
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    record: dict[str, object] | None = None
    slots: list[PatternSlot] = []
    lineno = 0
    try:
        for lineno, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            head = fields[0]
            if head == "pattern":
                if record is not None:
                    raise KnowledgeBaseError("record not closed with 'end'")
                record = {"name": fields[1]}
                slots = []
            elif record is None:
                raise KnowledgeBaseError(f"unexpected {head!r} outside a record")
            elif head == "provenance":
                record["provenance"] = fields[1]
            elif head == "solve":
                record["solve"] = None if fields[1] == "-" else fields[1]
            elif head == "slot":
                if len(fields) < 6:
                    raise KnowledgeBaseError(
                        "slot records need name, kind, role, rows and cols"
                    )
                rows, cols = fields[4], fields[5]
                dims = None if rows == "-" else Dimension(rows, cols)
                props = frozenset(Property(p) for p in fields[6:])
                slots.append(PatternSlot(fields[1], fields[2], fields[3], props, dims))
            elif head == "post":
                record["post"] = parse_prefix_equation(line[len("post ") :])
            elif head == "solved":
                record["solved"] = parse_prefix_equation(line[len("solved ") :])
            elif head == "end":
                kb = _close_record(kb, record, slots)
                record = None
            else:
                raise KnowledgeBaseError(f"unknown field {head!r}")
        if record is not None:
            raise KnowledgeBaseError("unterminated pattern record")
    except (IndexError, ValueError) as exc:
        raise KnowledgeBaseError(f"{path}:{lineno}: {exc}") from exc
    return kb


def _close_record(
    kb: KnowledgeBase, record: dict[str, object] | None, slots: list[PatternSlot]
) -> KnowledgeBase:
    if record is None:
        raise KnowledgeBaseError("'end' without a record")
    try:
        name = str(record["name"])
        template = record["post"]
        solved = record["solved"]
    except KeyError as exc:
        raise KnowledgeBaseError(f"record missing field {exc}") from exc
    assert isinstance(template, Equation) and isinstance(solved, Equation)
    if normalize_equation(template) != template:
        raise KnowledgeBaseError(f"pattern {name}: template is not normalized")
    if kb.get(name) is not None:
        raise KnowledgeBaseError(f"pattern {name} defined twice")
    slot_names = {s.name for s in slots}
    if len(slot_names) != len(slots):
        raise KnowledgeBaseError(f"pattern {name}: duplicate slot names")
    used = operand_names(template.lhs) | operand_names(template.rhs)
    if not used <= slot_names:
        raise KnowledgeBaseError(f"pattern {name}: template uses undeclared slots")
    pattern = Pattern(
        name=name,
        solution_operator=record.get("solve"),  # type: ignore[arg-type]
        slots=tuple(slots),
        template=template,
        solved=normalize_equation(solved),
        provenance=str(record.get("provenance", "learned-from:unknown")),
    )
    return kb.with_learned(pattern)
