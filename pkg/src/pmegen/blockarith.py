"""Blocked arithmetic: distribute an equation over operand partitionings.

Substituting each operand's blocking into the postcondition and carrying
out symbolic block products and sums turns one matrix equation into a
grid of per-quadrant equations.  Each cell is put into canonical form
immediately (unknown-containing terms left, known-only terms right), and
cells whose equation is the transpose of another cell's are marked
redundant with a star, pointing at their partner.

Grids are at most 2x2 because individual operands are never blocked
finer than 2x2.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .binding import RuleCombination, analyze
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
    is_tautology_candidate,
    minus,
    normalize,
    operand_names,
    plus,
    serialize_equation,
    times,
    to_canonical_equation,
    trans,
    transpose_equation,
    inv,
)
from .opspec import OperandDecl, OperationSpec
from .partition import BlockedOperand, apply_rule

__all__ = [
    "ConformanceError",
    "QuadrantEquation",
    "BlockedEquationGrid",
    "STATUS_UNSOLVED",
    "STATUS_SOLVED",
    "STATUS_STAR",
    "blocked_operands",
    "validate_conformance",
    "blocked_postcondition",
    "raw_blocked_equations",
    "detect_star",
    "position_names",
]

STATUS_UNSOLVED = "unsolved"
STATUS_SOLVED = "solved"
STATUS_STAR = "star"


class ConformanceError(ValueError):
    """The chosen blockings do not yield well-defined block arithmetic."""


@dataclass(frozen=True, slots=True)
class QuadrantEquation:
    """One per-block equation with its solving status."""

    position: str
    equation: Equation
    status: str = STATUS_UNSOLVED
    partner: Optional[str] = None


@dataclass(frozen=True, slots=True)
class BlockedEquationGrid:
    cells: tuple[tuple[QuadrantEquation, ...], ...]
    row_sizes: tuple[str, ...]
    col_sizes: tuple[str, ...]

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

    def scan_positions(self) -> tuple[str, ...]:
        """Column-major scan order: TL, BL, TR, BR (T, B / L, R / whole)."""
        nr, nc = self.shape
        names = position_names(nr, nc)
        return tuple(names[i][j] for j in range(nc) for i in range(nr))

    def with_cell(self, q: QuadrantEquation) -> "BlockedEquationGrid":
        rows = tuple(
            tuple(q if c.position == q.position else c for c in row)
            for row in self.cells
        )
        return replace(self, cells=rows)


def position_names(nrows: int, ncols: int) -> tuple[tuple[str, ...], ...]:
    if (nrows, ncols) == (2, 2):
        return (("TL", "TR"), ("BL", "BR"))
    if (nrows, ncols) == (2, 1):
        return (("T",), ("B",))
    if (nrows, ncols) == (1, 2):
        return (("L", "R"),)
    if (nrows, ncols) == (1, 1):
        return (("whole",),)
    raise ConformanceError(f"unsupported grid shape {nrows}x{ncols}")


def blocked_operands(
    spec: OperationSpec, rules: RuleCombination
) -> dict[str, BlockedOperand]:
    """Apply each operand's rule, with sizes canonicalized per dimension group."""
    analysis = analyze(spec)
    out: dict[str, BlockedOperand] = {}
    for decl in spec.operands:
        rows, cols = analysis.canonical_dims(decl.name)
        canonical = OperandDecl(
            decl.name, decl.kind, Dimension(rows, cols), decl.io_role, decl.properties
        )
        out[decl.name] = apply_rule(canonical, rules.rule_for(decl.name))
    return out


@dataclass(frozen=True, slots=True)
class _Grid:
    cells: tuple[tuple[Expression, ...], ...]
    row_sizes: tuple[str, ...]
    col_sizes: tuple[str, ...]


def _grid_of(b: BlockedOperand) -> _Grid:
    return _Grid(b.cells, b.row_sizes, b.col_sizes)


def _mul(a: _Grid, b: _Grid) -> _Grid:
    if a.col_sizes != b.row_sizes:
        raise ConformanceError(
            f"inner block sizes differ: {a.col_sizes} vs {b.row_sizes}"
        )
    cells = tuple(
        tuple(
            plus(*(times(a.cells[i][k], b.cells[k][j]) for k in range(len(a.col_sizes))))
            for j in range(len(b.col_sizes))
        )
        for i in range(len(a.row_sizes))
    )
    return _Grid(cells, a.row_sizes, b.col_sizes)


def _same_shape(a: _Grid, b: _Grid, what: str) -> None:
    if a.row_sizes != b.row_sizes or a.col_sizes != b.col_sizes:
        raise ConformanceError(
            f"{what}: block shapes differ: "
            f"{a.row_sizes}x{a.col_sizes} vs {b.row_sizes}x{b.col_sizes}"
        )


def _eval_blocked(e: Expression, blocks: dict[str, BlockedOperand]) -> _Grid:
    if isinstance(e, OperandRef):
        return _grid_of(blocks[e.name])
    if isinstance(e, Times):
        grid = _eval_blocked(e.factors[0], blocks)
        for f in e.factors[1:]:
            grid = _mul(grid, _eval_blocked(f, blocks))
        return grid
    if isinstance(e, Plus):
        grid = _eval_blocked(e.terms[0], blocks)
        for t in e.terms[1:]:
            other = _eval_blocked(t, blocks)
            _same_shape(grid, other, "sum")
            cells = tuple(
                tuple(plus(a, b) for a, b in zip(ra, rb))
                for ra, rb in zip(grid.cells, other.cells)
            )
            grid = _Grid(cells, grid.row_sizes, grid.col_sizes)
        return grid
    if isinstance(e, Minus):
        inner = _eval_blocked(e.operand, blocks)
        return _Grid(
            tuple(tuple(minus(c) for c in row) for row in inner.cells),
            inner.row_sizes,
            inner.col_sizes,
        )
    if isinstance(e, Transpose):
        inner = _eval_blocked(e.operand, blocks)
        nr, nc = len(inner.row_sizes), len(inner.col_sizes)
        cells = tuple(
            tuple(trans(inner.cells[j][i]) for j in range(nr)) for i in range(nc)
        )
        return _Grid(cells, inner.col_sizes, inner.row_sizes)
    if isinstance(e, Inverse):
        inner = _eval_blocked(e.operand, blocks)
        if (len(inner.row_sizes), len(inner.col_sizes)) != (1, 1):
            raise ConformanceError("blocked inverses of partitioned operands are unsupported")
        return _Grid(((inv(inner.cells[0][0]),),), inner.row_sizes, inner.col_sizes)
    if isinstance(e, SolvedBy):
        raise ConformanceError("solution operators may not appear in postconditions")
    raise ConformanceError(f"cannot block node {type(e).__name__}")


def raw_blocked_equations(
    spec: OperationSpec, rules: RuleCombination
) -> BlockedEquationGrid:
    """Distribute ``=`` over the blockings without canonicalization."""
    blocks = blocked_operands(spec, rules)
    lhs = _eval_blocked(spec.postcondition.lhs, blocks)
    rhs = _eval_blocked(spec.postcondition.rhs, blocks)
    _same_shape(lhs, rhs, "equation")
    nr, nc = len(lhs.row_sizes), len(lhs.col_sizes)
    names = position_names(nr, nc)
    cells = tuple(
        tuple(
            QuadrantEquation(
                position=names[i][j],
                equation=Equation(lhs.cells[i][j], rhs.cells[i][j]),
            )
            for j in range(nc)
        )
        for i in range(nr)
    )
    return BlockedEquationGrid(cells, lhs.row_sizes, lhs.col_sizes)


def validate_conformance(spec: OperationSpec, rules: RuleCombination) -> bool:
    """True when every product, sum and the equality are well defined."""
    try:
        raw_blocked_equations(spec, rules)
    except ConformanceError:
        return False
    return True


def blocked_postcondition(
    spec: OperationSpec, rules: RuleCombination
) -> BlockedEquationGrid:
    """The star-marked, canonicalized grid of quadrant equations.

    Cells that hold trivially (zero equals zero) are marked solved right
    away so the derivation loop only ever sees informative equations.
    """
    if rules.is_all_identity():
        raise ConformanceError(
            "the all-identity combination does not partition anything"
        )
    raw = raw_blocked_equations(spec, rules)
    known = _known_blocks(spec, rules)
    rows: list[tuple[QuadrantEquation, ...]] = []
    for row in raw.cells:
        out_row: list[QuadrantEquation] = []
        for q in row:
            eq = to_canonical_equation(q.equation, known)
            status = STATUS_UNSOLVED
            if is_tautology_candidate(eq, known) and normalize(eq.lhs) == normalize(
                eq.rhs
            ):
                status = STATUS_SOLVED
            out_row.append(QuadrantEquation(q.position, eq, status))
        rows.append(tuple(out_row))
    grid = BlockedEquationGrid(tuple(rows), raw.row_sizes, raw.col_sizes)
    return detect_star(grid)


def _known_blocks(spec: OperationSpec, rules: RuleCombination) -> frozenset[str]:
    blocks = blocked_operands(spec, rules)
    known: set[str] = set()
    for decl in spec.inputs():
        for row in blocks[decl.name].cells:
            for cell in row:
                known |= operand_names(cell)
    return frozenset(known)


def detect_star(grid: BlockedEquationGrid) -> BlockedEquationGrid:
    """Mark cells whose equation is the transpose of a partner's.

    Only one cell of each pair is marked; for the mirrored quadrants of a
    2x2 grid the strictly-upper cell yields to the lower one.  Already
    marked or solved cells are left alone, so the marking is idempotent.
    """
    nr, nc = grid.shape
    flat = [(i, j, grid.cells[i][j]) for i in range(nr) for j in range(nc)]
    out = grid
    starred: set[str] = {
        q.position for _, _, q in flat if q.status == STATUS_STAR
    }
    for ai in range(len(flat)):
        i, j, a = flat[ai]
        if a.status != STATUS_UNSOLVED or a.position in starred:
            continue
        for bi in range(ai + 1, len(flat)):
            bi_i, bi_j, b = flat[bi]
            if b.status != STATUS_UNSOLVED or b.position in starred:
                continue
            mirrored = transpose_equation(b.equation)
            if serialize_equation(mirrored) != serialize_equation(
                Equation(normalize(a.equation.lhs), normalize(a.equation.rhs))
            ):
                continue
            # the strictly-upper cell of the pair carries the star; for
            # pairs without one, the later cell in reading order yields
            if j > i and not bi_j > bi_i:
                star_cell, keep_cell = a, b
            elif bi_j > bi_i and not j > i:
                star_cell, keep_cell = b, a
            else:
                star_cell, keep_cell = b, a
            out = out.with_cell(
                QuadrantEquation(
                    star_cell.position,
                    star_cell.equation,
                    STATUS_STAR,
                    partner=keep_cell.position,
                )
            )
            starred.add(star_cell.position)
            break
    return out
