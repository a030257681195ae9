"""Shared fixtures and generators for the test suite."""

from __future__ import annotations

import os

import numpy as np
import pytest

from pmegen.binding import RuleCombination
from pmegen.blockarith import blocked_operands, raw_blocked_equations
from pmegen.expr import (
    Dimension,
    Equation,
    Expression,
    OperandRef,
    minus,
    operand_names,
    plus,
    ref,
    times,
    trans,
)
from pmegen.opspec import (
    KIND_MATRIX,
    OperandDecl,
    OperationSpec,
    Property,
    ROLE_KNOWN,
    ROLE_UNKNOWN,
    build_spec,
    parse_operation,
)
from pmegen.oracle import NumericBinding, eval_size, evaluate, sample_value

OPS_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "ops")


def load_op(name: str) -> OperationSpec:
    with open(os.path.join(OPS_DIR, f"{name}.op"), "r", encoding="utf-8") as fh:
        return parse_operation(fh.read())


@pytest.fixture(scope="session")
def cholesky_spec() -> OperationSpec:
    return load_op("cholesky")


@pytest.fixture(scope="session")
def sylvester_spec() -> OperationSpec:
    return load_op("sylvester")


@pytest.fixture(scope="session")
def trsm_spec() -> OperationSpec:
    return load_op("trsm")


# ---------------------------------------------------------------------------
# random, dimension-consistent operation specs


_STRUCTURES = (
    frozenset(),
    frozenset(),
    frozenset(),
    frozenset({Property.LOWER_TRIANGULAR}),
    frozenset({Property.UPPER_TRIANGULAR}),
    frozenset({Property.SYMMETRIC}),
    frozenset({Property.SPD}),
    frozenset({Property.DIAGONAL}),
)


def random_spec(rng: np.random.Generator) -> OperationSpec:
    """A random valid spec: sums of chained products against a known rhs.

    Operands are declared as they are first used, with structure only on
    square operands, so every generated postcondition is dimensionally
    consistent by construction.
    """
    pool = ("m", "n", "p")
    for _ in range(50):
        decls: list[OperandDecl] = []
        by_dims: dict[tuple[str, str], list[str]] = {}
        counter = [0]

        def new_operand(rows: str, cols: str) -> str:
            name = "ABCDEFGHJKQW"[counter[0]]
            counter[0] += 1
            if rows == cols:
                props = _STRUCTURES[rng.integers(0, len(_STRUCTURES))]
            else:
                props = frozenset()
            decls.append(
                OperandDecl(name, KIND_MATRIX, Dimension(rows, cols), ROLE_KNOWN, props)
            )
            by_dims.setdefault((rows, cols), []).append(name)
            return name

        def factor(rows: str, cols: str) -> Expression:
            reuse = by_dims.get((rows, cols), [])
            mirrored = by_dims.get((cols, rows), [])
            roll = rng.random()
            if reuse and roll < 0.4:
                return ref(reuse[int(rng.integers(0, len(reuse)))])
            if mirrored and roll < 0.55 and rows != cols:
                return trans(ref(mirrored[int(rng.integers(0, len(mirrored)))]))
            if counter[0] >= 10:
                if reuse:
                    return ref(reuse[0])
                if mirrored:
                    return trans(ref(mirrored[0]))
            return ref(new_operand(rows, cols))

        d0 = pool[int(rng.integers(0, 3))]
        d1 = pool[int(rng.integers(0, 3))]
        terms: list[Expression] = []
        for _ in range(int(rng.integers(1, 4))):
            length = int(rng.integers(1, 4))
            chain = [d0] + [pool[int(rng.integers(0, 3))] for _ in range(length - 1)] + [d1]
            factors = [factor(chain[i], chain[i + 1]) for i in range(length)]
            term = factors[0] if len(factors) == 1 else times(*factors)
            if rng.random() < 0.25:
                term = minus(term)
            terms.append(term)
        lhs = plus(*terms)
        rhs_name = new_operand(d0, d1)
        used = {d.name for d in decls}
        lhs_names = sorted(
            n for n in used - {rhs_name} if n in _names_of(lhs)
        )
        if not lhs_names:
            continue
        unknown = lhs_names[int(rng.integers(0, len(lhs_names)))]
        final = [
            OperandDecl(
                d.name,
                d.kind,
                d.dims,
                ROLE_UNKNOWN if d.name == unknown else ROLE_KNOWN,
                d.properties,
            )
            for d in decls
            if d.name in _names_of(lhs) or d.name == rhs_name
        ]
        try:
            return build_spec("randop", final, Equation(lhs, ref(rhs_name)), "Delta")
        except Exception:
            continue
    raise RuntimeError("could not generate a random spec")


def _names_of(e: Expression) -> frozenset[str]:
    return operand_names(e)


# ---------------------------------------------------------------------------
# numeric faithfulness helper (blocked arithmetic vs whole-matrix arithmetic)


def _sizes_for(blocks, rng: np.random.Generator, lo: int = 2, hi: int = 6) -> dict[str, int]:
    parents: set[str] = set()
    splits: dict[str, str] = {}
    for b in blocks.values():
        for size in b.row_sizes + b.col_sizes:
            if "-" in size:
                parent, split = size.split("-", 1)
                parents.add(parent)
                splits[split] = parent
            elif size != "1":
                parents.add(size)
    sizes = {p: int(rng.integers(lo, hi + 1)) for p in sorted(parents)}
    for split, parent in sorted(splits.items()):
        sizes[split] = int(rng.integers(1, sizes[parent]))
    return sizes


def check_blocking_faithful(
    spec: OperationSpec,
    combo: RuleCombination,
    rng: np.random.Generator,
    tol: float = 1e-12,
) -> int:
    """Evaluate every raw quadrant equation against slices of the full sides.

    Returns the number of cells compared; raises AssertionError on any
    relative mismatch beyond ``tol``.
    """
    blocks = blocked_operands(spec, combo)
    grid = raw_blocked_equations(spec, combo)
    sizes = _sizes_for(blocks, rng)
    values: dict[str, np.ndarray] = {}
    for decl in spec.operands:
        b = blocks[decl.name]
        shape = (
            sum(eval_size(s, sizes) for s in b.row_sizes),
            sum(eval_size(s, sizes) for s in b.col_sizes),
        )
        full = sample_value(decl.kind, shape, decl.properties, rng)
        values[decl.name] = full
        row_edges = np.cumsum([0] + [eval_size(s, sizes) for s in b.row_sizes])
        col_edges = np.cumsum([0] + [eval_size(s, sizes) for s in b.col_sizes])
        for i, row in enumerate(b.cells):
            for j, cell in enumerate(row):
                if isinstance(cell, OperandRef):
                    values[cell.name] = full[
                        row_edges[i] : row_edges[i + 1],
                        col_edges[j] : col_edges[j + 1],
                    ]
    binding = NumericBinding(sizes=sizes, values=values)
    lhs_full = evaluate(spec.postcondition.lhs, binding)
    rhs_full = evaluate(spec.postcondition.rhs, binding)
    row_edges = np.cumsum([0] + [eval_size(s, sizes) for s in grid.row_sizes])
    col_edges = np.cumsum([0] + [eval_size(s, sizes) for s in grid.col_sizes])
    scale_l = max(float(np.linalg.norm(lhs_full)), 1.0)
    scale_r = max(float(np.linalg.norm(rhs_full)), 1.0)
    checked = 0
    for i, row in enumerate(grid.cells):
        for j, q in enumerate(row):
            shape = (
                row_edges[i + 1] - row_edges[i],
                col_edges[j + 1] - col_edges[j],
            )
            lv = evaluate(q.equation.lhs, binding, shape=shape)
            rv = evaluate(q.equation.rhs, binding, shape=shape)
            ls = lhs_full[row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]]
            rs = rhs_full[row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]]
            assert np.linalg.norm(lv - ls) / scale_l <= tol
            assert np.linalg.norm(rv - rs) / scale_r <= tol
            checked += 1
    return checked
