"""Dimension binding groups and combination enumeration."""

from __future__ import annotations

import numpy as np
import pytest

from pmegen.binding import (
    BindingError,
    DimensionConflictError,
    DimensionVar,
    NoViablePartitioningsError,
    analyze,
    bind_dimensions,
    enumerate_combinations,
)
from pmegen.blockarith import validate_conformance
from pmegen.expr import Equation, SolvedBy, ref
from pmegen.opspec import OperationSpec, parse_operation
from pmegen.partition import PartitionShape

from conftest import random_spec


def V(operand: str, axis: str) -> DimensionVar:
    return DimensionVar(operand, axis)


class TestBindDimensions:
    def test_sylvester_two_groups(self, sylvester_spec):
        groups = bind_dimensions(sylvester_spec)
        assert groups == (
            frozenset({V("L", "r"), V("L", "c"), V("X", "r"), V("C", "r")}),
            frozenset({V("U", "r"), V("U", "c"), V("X", "c"), V("C", "c")}),
        )

    def test_cholesky_single_group(self, cholesky_spec):
        groups = bind_dimensions(cholesky_spec)
        assert groups == (
            frozenset({V("L", "r"), V("L", "c"), V("A", "r"), V("A", "c")}),
        )

    def test_plain_assignment_two_groups(self):
        spec = parse_operation(
            "operation assignop\n"
            "  operand X : matrix(m,n) , unknown\n"
            "  operand B : matrix(m,n) , known\n"
            "  postcondition: X = B\n"
            "  solve: S\n"
        )
        assert bind_dimensions(spec) == (
            frozenset({V("X", "r"), V("B", "r")}),
            frozenset({V("X", "c"), V("B", "c")}),
        )

    def test_declaration_order_irrelevant(self, sylvester_spec):
        reordered = parse_operation(
            "operation sylvester\n"
            "  operand X : matrix(m,n) , unknown\n"
            "  operand C : matrix(m,n) , known\n"
            "  operand U : matrix(n,n) , known , upper_triangular\n"
            "  operand L : matrix(m,m) , known , lower_triangular\n"
            "  postcondition: L * X + X * U = C\n"
            "  solve: Omega\n"
        )
        assert set(bind_dimensions(reordered)) == set(bind_dimensions(sylvester_spec))

    def test_solution_operator_rejected(self, cholesky_spec):
        bad = OperationSpec(
            "bad",
            cholesky_spec.operands,
            Equation(ref("L"), SolvedBy("Gamma", (ref("A"),))),
            "Gamma",
        )
        with pytest.raises(BindingError):
            bind_dimensions(bad)

    def test_dimension_conflict_with_fixed_size(self):
        spec = parse_operation(
            "operation bad\n"
            "  operand A : matrix(m,n) , known\n"
            "  operand v : vector(n) , known\n"
            "  operand C : matrix(m,p) , unknown\n"
            "  postcondition: A * v = C\n"
            "  solve: S\n"
        )
        with pytest.raises(DimensionConflictError):
            bind_dimensions(spec)

    def test_inverse_binds_square_and_pins_group(self):
        spec = parse_operation(
            "operation invprod\n"
            "  operand A : matrix(m,m) , known\n"
            "  operand B : matrix(m,n) , known\n"
            "  operand X : matrix(m,n) , unknown\n"
            "  postcondition: inv(A) * X = B\n"
            "  solve: S\n"
        )
        a = analyze(spec)
        assert frozenset({V("A", "r"), V("A", "c"), V("X", "r"), V("B", "r")}) in a.groups
        pinned = a.groups.index(
            frozenset({V("A", "r"), V("A", "c"), V("X", "r"), V("B", "r")})
        )
        assert not a.partitionable[pinned]
        # the column group is still free, so exactly one combination remains
        combos = enumerate_combinations(spec)
        assert len(combos) == 1
        assert combos[0].rule_for("A").shape is PartitionShape.R1x1


class TestEnumerate:
    def test_sylvester_matches_expected_rule_table(self, sylvester_spec):
        combos = enumerate_combinations(sylvester_spec)
        assert len(combos) == 3

        def shapes(c):
            return {name: rule.shape.value for name, rule in c.rules}

        assert shapes(combos[0]) == {"L": "1x1", "U": "2x2", "C": "1x2", "X": "1x2"}
        assert shapes(combos[1]) == {"L": "2x2", "U": "1x1", "C": "2x1", "X": "2x1"}
        assert shapes(combos[2]) == {"L": "2x2", "U": "2x2", "C": "2x2", "X": "2x2"}
        # split symbols are per group: k1 for the row group, k2 for the column group
        assert combos[0].rule_for("U").split_rows == "k2"
        assert combos[0].rule_for("X").split_cols == "k2"
        assert combos[1].rule_for("L").split_rows == "k1"
        assert combos[1].rule_for("C").split_rows == "k1"
        assert combos[2].rule_for("C").split_rows == "k1"
        assert combos[2].rule_for("C").split_cols == "k2"
        assert [c.index for c in combos] == [1, 2, 3]

    def test_cholesky_single_combination(self, cholesky_spec):
        combos = enumerate_combinations(cholesky_spec)
        assert len(combos) == 1
        assert {n: r.shape.value for n, r in combos[0].rules} == {
            "L": "2x2",
            "A": "2x2",
        }
        assert combos[0].rule_for("L").split_rows == "k1"
        assert combos[0].rule_for("A").split_rows == "k1"

    def test_scalar_equation_has_no_partitionings(self):
        spec = parse_operation(
            "operation scalarmul\n"
            "  operand x : scalar , known\n"
            "  operand y : scalar , unknown\n"
            "  operand z : scalar , known\n"
            "  postcondition: x * y = z\n"
            "  solve: Div\n"
        )
        with pytest.raises(NoViablePartitioningsError):
            enumerate_combinations(spec)

    def test_vector_column_axis_forced_keep(self):
        spec = parse_operation(
            "operation matvec\n"
            "  operand A : matrix(m,n) , known\n"
            "  operand x : vector(n) , known\n"
            "  operand b : vector(m) , unknown\n"
            "  postcondition: A * x = b\n"
            "  solve: S\n"
        )
        combos = enumerate_combinations(spec)
        shapes_seen = {
            tuple(sorted((n, r.shape.value) for n, r in c.rules)) for c in combos
        }
        # columns of the vectors never split
        for c in combos:
            assert c.rule_for("x").shape in (PartitionShape.R1x1, PartitionShape.R2x1)
            assert c.rule_for("b").shape in (PartitionShape.R1x1, PartitionShape.R2x1)
        assert len(combos) == 3
        assert len(shapes_seen) == 3

    def test_groups_argument_checked(self, cholesky_spec, sylvester_spec):
        with pytest.raises(BindingError):
            enumerate_combinations(cholesky_spec, bind_dimensions(sylvester_spec))


@pytest.mark.parametrize("seed", range(40))
def test_combination_count_law_and_conformance(seed):
    """|combinations| is 2^g - 1 and every combination is well defined."""
    spec = random_spec(np.random.default_rng(seed))
    a = analyze(spec)
    g = sum(a.partitionable)
    if g == 0:
        with pytest.raises(NoViablePartitioningsError):
            enumerate_combinations(spec)
        return
    combos = enumerate_combinations(spec)
    assert len(combos) == 2**g - 1
    assert len({tuple(c.group_choices) for c in combos}) == len(combos)
    for combo in combos:
        assert not combo.is_all_identity()
        assert validate_conformance(spec, combo)
