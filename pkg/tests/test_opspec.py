"""Parsing, validation and rendering of operation descriptions."""

from __future__ import annotations

import numpy as np
import pytest

from pmegen.expr import Dimension, Equation, ref, serialize_equation, times, trans
from pmegen.opspec import (
    KIND_MATRIX,
    OperandDecl,
    Property,
    ROLE_KNOWN,
    ROLE_UNKNOWN,
    SpecError,
    SpecSyntaxError,
    SpecValidationError,
    build_spec,
    parse_operation,
    render_spec,
)

from conftest import load_op, random_spec


class TestParse:
    def test_cholesky(self, cholesky_spec):
        assert cholesky_spec.name == "cholesky"
        L, A = cholesky_spec.operands
        assert L.name == "L" and L.is_output
        assert L.properties == frozenset({Property.LOWER_TRIANGULAR})
        assert A.name == "A" and A.is_input
        # spd implies symmetric
        assert A.properties == frozenset({Property.SPD, Property.SYMMETRIC})
        assert A.dims == Dimension("m", "m")
        assert (
            serialize_equation(cholesky_spec.postcondition)
            == "(eq (times L (trans L)) A)"
        )
        assert cholesky_spec.solution_operator == "Gamma"

    def test_sylvester(self, sylvester_spec):
        names = [d.name for d in sylvester_spec.operands]
        assert names == ["L", "U", "C", "X"]
        assert sylvester_spec.operand("U").properties == frozenset(
            {Property.UPPER_TRIANGULAR}
        )
        assert sylvester_spec.operand("X").is_output
        assert (
            serialize_equation(sylvester_spec.postcondition)
            == "(eq (plus (times L X) (times X U)) C)"
        )
        assert sylvester_spec.solution_operator == "Omega"

    def test_trsm(self, trsm_spec):
        assert trsm_spec.operand("X").is_output
        assert (
            serialize_equation(trsm_spec.postcondition)
            == "(eq (times X (trans L)) B)"
        )
        assert trsm_spec.solution_operator == "Trsm"

    def test_standard_symbols_covered(self):
        """The shipped examples exercise the usual operand and size names."""
        specs = [load_op(n) for n in ("cholesky", "sylvester", "trsm")]
        operand_names = {d.name for s in specs for d in s.operands}
        assert {"L", "U", "A", "C", "X", "B"} <= operand_names
        sizes = {
            d.dims.rows for s in specs for d in s.operands
        } | {d.dims.cols for s in specs for d in s.operands}
        assert {"m", "n"} <= sizes
        assert {s.solution_operator for s in specs} == {"Gamma", "Omega", "Trsm"}

    def test_comments_and_blank_lines_ignored(self):
        text = """
        # a comment
        operation plainassign

          operand X : matrix(m,n) , unknown   # trailing comment
          operand B : matrix(m,n) , known
          postcondition: X = B
          solve: Assign
        """
        spec = parse_operation(text)
        assert spec.name == "plainassign"


class TestParseErrors:
    def test_syntax_error_carries_position(self):
        text = "operation bad\n  operand L ! matrix(m,m) , known\n"
        with pytest.raises(SpecSyntaxError) as err:
            parse_operation(text)
        assert "line 2" in str(err.value)

    def test_undeclared_operand(self):
        text = (
            "operation bad\n"
            "  operand X : matrix(m,n) , unknown\n"
            "  postcondition: X = B\n"
            "  solve: S\n"
        )
        with pytest.raises(SpecError, match="not declared"):
            parse_operation(text)

    def test_duplicate_operand(self):
        text = (
            "operation bad\n"
            "  operand X : matrix(m,n) , unknown\n"
            "  operand X : matrix(m,n) , known\n"
            "  postcondition: X = X\n"
            "  solve: S\n"
        )
        with pytest.raises(SpecError, match="duplicate"):
            parse_operation(text)

    def test_property_kind_conflict(self):
        text = (
            "operation bad\n"
            "  operand v : vector(m) , known , lower_triangular\n"
            "  operand X : matrix(m,n) , unknown\n"
            "  postcondition: X = v\n"
            "  solve: S\n"
        )
        with pytest.raises(SpecError, match="matrix"):
            parse_operation(text)

    def test_conflicting_shapes(self):
        text = (
            "operation bad\n"
            "  operand A : matrix(m,m) , known , lower_triangular , upper_triangular\n"
            "  operand X : matrix(m,m) , unknown\n"
            "  postcondition: X = A\n"
            "  solve: S\n"
        )
        with pytest.raises(SpecError, match="conflicting"):
            parse_operation(text)

    def test_structural_property_needs_square(self):
        text = (
            "operation bad\n"
            "  operand A : matrix(m,n) , known , symmetric\n"
            "  operand X : matrix(m,n) , unknown\n"
            "  postcondition: X = A\n"
            "  solve: S\n"
        )
        with pytest.raises(SpecError, match="square"):
            parse_operation(text)

    def test_unused_operand_rejected(self):
        text = (
            "operation bad\n"
            "  operand A : matrix(m,m) , known\n"
            "  operand B : matrix(m,m) , known\n"
            "  operand X : matrix(m,m) , unknown\n"
            "  postcondition: X = A\n"
            "  solve: S\n"
        )
        with pytest.raises(SpecError, match="unused"):
            parse_operation(text)

    def test_no_output_operand(self):
        text = (
            "operation bad\n"
            "  operand A : matrix(m,m) , known\n"
            "  postcondition: A = A\n"
            "  solve: S\n"
        )
        with pytest.raises(SpecError, match="unknown operand"):
            parse_operation(text)

    def test_missing_sections(self):
        with pytest.raises(SpecSyntaxError, match="postcondition"):
            parse_operation("operation x\n  operand A : scalar , unknown\n  solve: S\n")


class TestRender:
    @pytest.mark.parametrize("name", ["cholesky", "sylvester", "trsm"])
    def test_round_trip_shipped_ops(self, name):
        spec = load_op(name)
        text = render_spec(spec)
        again = parse_operation(text)
        assert again == spec
        assert render_spec(again) == text

    def test_round_trip_all_property_kinds(self):
        ops = [
            OperandDecl("A", KIND_MATRIX, Dimension("m", "m"), ROLE_KNOWN,
                        frozenset({Property.SPD})),
            OperandDecl("D", KIND_MATRIX, Dimension("m", "m"), ROLE_KNOWN,
                        frozenset({Property.DIAGONAL})),
            OperandDecl("U", KIND_MATRIX, Dimension("m", "m"), ROLE_KNOWN,
                        frozenset({Property.UPPER_TRIANGULAR})),
            OperandDecl("X", KIND_MATRIX, Dimension("m", "m"), ROLE_UNKNOWN,
                        frozenset({Property.LOWER_TRIANGULAR})),
        ]
        post = Equation(
            times(ref("X"), ref("D")), times(ref("A"), trans(ref("U")))
        )
        spec = build_spec("mixed", ops, post, "Theta")
        text = render_spec(spec)
        assert parse_operation(text) == spec

    def test_empty_operand_list_rejected(self):
        with pytest.raises(SpecValidationError):
            build_spec("empty", [], Equation(ref("X"), ref("B")), "S")

    def test_vector_and_scalar_render(self):
        text = (
            "operation vecscale\n"
            "  operand a : scalar , known\n"
            "  operand v : vector(m) , known\n"
            "  operand x : vector(m) , unknown\n"
            "  postcondition: a * x = v\n"
            "  solve: Scale\n"
        )
        spec = parse_operation(text)
        assert spec.operand("v").dims == Dimension("m", "1")
        assert spec.operand("a").dims == Dimension("1", "1")
        assert parse_operation(render_spec(spec)) == spec

    @pytest.mark.parametrize("seed", range(25))
    def test_round_trip_random_specs(self, seed):
        spec = random_spec(np.random.default_rng(seed))
        assert parse_operation(render_spec(spec)) == spec
