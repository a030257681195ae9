"""Dimension binding and enumeration of viable partitioning combinations.

Partitioning one dimension of an operand can force other dimensions to be
partitioned at the same point: a triangular operand ties its rows to its
columns, a product ties the inner dimensions of its factors, a sum and
the equality tie corresponding dimensions of both sides.  This module
walks the postcondition tree once, in post-order, merging dimension
variables (one per operand axis) into equivalence groups with a disjoint
set structure.

With ``g`` partitionable groups there are ``2**g`` keep/split choices;
the all-keep choice does not partition anything and is dropped, leaving
``2**g - 1`` viable rule combinations.  Combinations are emitted in
binary counting order with the first-seen group as the most significant
bit, and group ``i`` splits at the fresh size symbol ``k{i+1}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .expr import (
    Expression,
    Inverse,
    Minus,
    OperandRef,
    Plus,
    SolvedBy,
    Times,
    Transpose,
    Zero,
)
from .opspec import KIND_SCALAR, KIND_VECTOR, OperationSpec
from .partition import PartitionRule, PartitionShape

__all__ = [
    "DimensionVar",
    "RuleCombination",
    "BindingError",
    "DimensionConflictError",
    "NoViablePartitioningsError",
    "bind_dimensions",
    "analyze",
    "BindingAnalysis",
    "enumerate_combinations",
]


class BindingError(ValueError):
    pass


class DimensionConflictError(BindingError):
    """The postcondition forces a size symbol to equal a fixed size 1."""


class NoViablePartitioningsError(BindingError):
    """No dimension group can be partitioned."""


@dataclass(frozen=True, slots=True)
class DimensionVar:
    """One axis of one operand; axis is ``"r"`` or ``"c"``."""

    operand: str
    axis: str

    def __str__(self) -> str:
        return f"{self.operand}_{self.axis}"


@dataclass(frozen=True, slots=True)
class RuleCombination:
    """One keep/split choice per dimension group, mapped to operand rules."""

    index: int
    rules: tuple[tuple[str, PartitionRule], ...]
    group_choices: tuple[tuple[int, str], ...]

    def rule_for(self, operand: str) -> PartitionRule:
        for name, rule in self.rules:
            if name == operand:
                return rule
        raise KeyError(operand)

    def is_all_identity(self) -> bool:
        return all(rule.is_identity for _, rule in self.rules)


class _DSU:
    def __init__(self) -> None:
        self.parent: dict[DimensionVar, DimensionVar] = {}

    def add(self, v: DimensionVar) -> None:
        self.parent.setdefault(v, v)

    def find(self, v: DimensionVar) -> DimensionVar:
        root = v
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[v] != root:
            self.parent[v], v = root, self.parent[v]
        return root

    def union(self, a: DimensionVar, b: DimensionVar) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


@dataclass
class BindingAnalysis:
    """Groups plus the per-group data the rest of the pipeline needs."""

    groups: tuple[frozenset[DimensionVar], ...]
    partitionable: tuple[bool, ...]
    var_group: dict[DimensionVar, int]
    canonical_sizes: dict[DimensionVar, str]
    split_symbols: tuple[str, ...]

    def canonical_dims(self, operand: str) -> tuple[str, str]:
        return (
            self.canonical_sizes[DimensionVar(operand, "r")],
            self.canonical_sizes[DimensionVar(operand, "c")],
        )


def _declared_size(spec: OperationSpec, v: DimensionVar) -> str:
    d = spec.operand(v.operand).dims
    return d.rows if v.axis == "r" else d.cols


def _axis_partitionable(spec: OperationSpec, v: DimensionVar) -> bool:
    decl = spec.operand(v.operand)
    if decl.kind == KIND_SCALAR:
        return False
    if decl.kind == KIND_VECTOR and v.axis == "c":
        return False
    return True


def analyze(spec: OperationSpec) -> BindingAnalysis:
    """Post-order traversal of the postcondition, returning merged groups."""
    dsu = _DSU()
    encounter: dict[DimensionVar, int] = {}
    forced_keep: set[DimensionVar] = set()
    counter = [0]

    def seen(v: DimensionVar) -> DimensionVar:
        dsu.add(v)
        if v not in encounter:
            encounter[v] = counter[0]
            counter[0] += 1
        return v

    def visit(e: Expression) -> tuple[DimensionVar, DimensionVar]:
        if isinstance(e, OperandRef):
            decl = spec.operand(e.name)
            r = seen(DimensionVar(e.name, "r"))
            c = seen(DimensionVar(e.name, "c"))
            if decl.is_structured:
                dsu.union(r, c)
            return (r, c)
        if isinstance(e, Minus):
            return visit(e.operand)
        if isinstance(e, Transpose):
            r, c = visit(e.operand)
            return (c, r)
        if isinstance(e, Inverse):
            r, c = visit(e.operand)
            dsu.union(r, c)
            # blocked inverses of partitioned operands are out of scope, so
            # an inverted subtree pins its dimension group to "keep"
            forced_keep.add(r)
            return (r, c)
        if isinstance(e, Times):
            r, c = visit(e.factors[0])
            for f in e.factors[1:]:
                fr, fc = visit(f)
                dsu.union(c, fr)
                c = fc
            return (r, c)
        if isinstance(e, Plus):
            r, c = visit(e.terms[0])
            for t in e.terms[1:]:
                tr_, tc = visit(t)
                dsu.union(r, tr_)
                dsu.union(c, tc)
            return (r, c)
        if isinstance(e, SolvedBy):
            raise BindingError("solution operators may not appear in postconditions")
        if isinstance(e, Zero):
            raise BindingError("the zero block may not appear in postconditions")
        raise BindingError(f"unsupported node {type(e).__name__}")

    lr, lc = visit(spec.postcondition.lhs)
    rr, rc = visit(spec.postcondition.rhs)
    dsu.union(lr, rr)
    dsu.union(lc, rc)

    by_root: dict[DimensionVar, list[DimensionVar]] = {}
    for v in encounter:
        by_root.setdefault(dsu.find(v), []).append(v)
    ordered = sorted(by_root.values(), key=lambda vs: min(encounter[v] for v in vs))

    groups: list[frozenset[DimensionVar]] = []
    partitionable: list[bool] = []
    var_group: dict[DimensionVar, int] = {}
    canonical: dict[DimensionVar, str] = {}
    for idx, members in enumerate(ordered):
        fs = frozenset(members)
        groups.append(fs)
        sizes = {_declared_size(spec, v) for v in members}
        if "1" in sizes and len(sizes) > 1:
            symbolic = sorted(s for s in sizes if s != "1")
            raise DimensionConflictError(
                f"size symbol(s) {', '.join(symbolic)} forced to the fixed size 1"
            )
        first = min(members, key=lambda v: encounter[v])
        canon = _declared_size(spec, first)
        ok = all(_axis_partitionable(spec, v) for v in members) and not (
            fs & forced_keep
        )
        partitionable.append(ok)
        for v in members:
            var_group[v] = idx
            canonical[v] = canon
    return BindingAnalysis(
        groups=tuple(groups),
        partitionable=tuple(partitionable),
        var_group=var_group,
        canonical_sizes=canonical,
        split_symbols=tuple(f"k{i + 1}" for i in range(len(groups))),
    )


def bind_dimensions(spec: OperationSpec) -> tuple[frozenset[DimensionVar], ...]:
    """Equivalence groups of operand axes, in first-encounter order."""
    return analyze(spec).groups


def enumerate_combinations(
    spec: OperationSpec,
    groups: Optional[Sequence[frozenset[DimensionVar]]] = None,
) -> tuple[RuleCombination, ...]:
    """All viable rule combinations, ``2**g - 1`` of them.

    Groups containing a scalar axis, a vector column axis, or an inverted
    subtree are forced to keep, which reduces the effective ``g``.
    """
    analysis = analyze(spec)
    if groups is not None and tuple(groups) != analysis.groups:
        raise BindingError("groups do not match this spec")
    part_idx = [i for i, ok in enumerate(analysis.partitionable) if ok]
    g = len(part_idx)
    if g == 0:
        raise NoViablePartitioningsError(
            f"operation {spec.name}: no viable partitionings"
        )
    out: list[RuleCombination] = []
    for mask in range(1, 2**g):
        split_groups = {
            part_idx[i] for i in range(g) if mask & (1 << (g - 1 - i))
        }
        rules: list[tuple[str, PartitionRule]] = []
        for decl in spec.operands:
            rg = analysis.var_group[DimensionVar(decl.name, "r")]
            cg = analysis.var_group[DimensionVar(decl.name, "c")]
            srows = analysis.split_symbols[rg] if rg in split_groups else None
            scols = analysis.split_symbols[cg] if cg in split_groups else None
            if srows and scols:
                shape = PartitionShape.R2x2
            elif srows:
                shape = PartitionShape.R2x1
            elif scols:
                shape = PartitionShape.R1x2
            else:
                shape = PartitionShape.R1x1
            rules.append(
                (decl.name, PartitionRule(shape, decl.name, srows, scols))
            )
        choices = tuple(
            (i, "split" if i in split_groups else "keep")
            for i in range(len(analysis.groups))
        )
        out.append(
            RuleCombination(index=len(out) + 1, rules=tuple(rules), group_choices=choices)
        )
    return tuple(out)
