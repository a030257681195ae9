"""Command-line front end: derive PMEs, check them numerically, manage patterns.

Commands::

    pmegen derive <file.op> [--kb PATH] [--ops-dir DIR] [--format text|latex|json]
                  [--learn] [--combination N] [--no-builtin NAME]...
    pmegen check <file.op> <pme.json> [--trials N] [--seed S] [--tolerance T]
    pmegen kb list|show <name> [--kb PATH]

The environment variable ``PME_KB`` supplies the default knowledge-base
path.  Exit codes: 0 success, 1 parse error, 2 no viable partitionings,
3 stuck derivation, 4 failed numeric check, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from . import binding, engine, oracle
from .binding import (
    DimensionConflictError,
    NoViablePartitioningsError,
    RuleCombination,
)
from .blockarith import STATUS_STAR, QuadrantEquation, position_names
from .engine import (
    PME,
    KnowledgeBaseError,
    PatternConflictError,
    StuckDerivation,
)
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
    parse_prefix_equation,
    serialize_equation,
)
from .opspec import OperationSpec, SpecError, equation_to_text, parse_operation
from .partition import PartitionRule, PartitionShape

__all__ = ["main"]

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_NO_VIABLE = 2
EXIT_STUCK = 3
EXIT_CHECK_FAILED = 4
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# latex rendering


_OPERATOR_LATEX = {"Gamma": r"\Gamma", "Omega": r"\Omega"}


def _latex_name(name: str) -> str:
    if "_" in name:
        base, suffix = name.split("_", 1)
        return f"{base}_{{{suffix}}}"
    return name


def _latex_base(e: Expression) -> str:
    text = expr_to_latex(e)
    if isinstance(e, (Plus, Times, Minus)):
        return f"\\left({text}\\right)"
    return text


def expr_to_latex(e: Expression) -> str:
    if isinstance(e, OperandRef):
        return _latex_name(e.name)
    if isinstance(e, Zero):
        return "0"
    if isinstance(e, Transpose):
        if isinstance(e.operand, Inverse):
            return _latex_base(e.operand.operand) + "^{-T}"
        return _latex_base(e.operand) + "^{T}"
    if isinstance(e, Inverse):
        if isinstance(e.operand, Transpose):
            return _latex_base(e.operand.operand) + "^{-T}"
        return _latex_base(e.operand) + "^{-1}"
    if isinstance(e, Minus):
        return "-" + _latex_base(e.operand)
    if isinstance(e, Times):
        return " ".join(_latex_base(f) for f in e.factors)
    if isinstance(e, Plus):
        pos = [t for t in e.terms if not isinstance(t, Minus)]
        neg = [t.operand for t in e.terms if isinstance(t, Minus)]
        head = (
            " + ".join(expr_to_latex(t) for t in pos)
            if pos
            else "-" + expr_to_latex(neg.pop(0))
        )
        return head + "".join(" - " + expr_to_latex(t) for t in neg)
    if isinstance(e, SolvedBy):
        op = _OPERATOR_LATEX.get(e.operator_name, rf"\mathrm{{{e.operator_name}}}")
        return op + "(" + ", ".join(expr_to_latex(a) for a in e.arguments) + ")"
    raise ValueError(f"cannot render node {type(e).__name__}")


def _cell_text(q: QuadrantEquation) -> str:
    if q.status == STATUS_STAR:
        return "*"
    return equation_to_text(q.equation)


def _cell_latex(q: QuadrantEquation) -> str:
    if q.status == STATUS_STAR:
        return r"\star"
    return expr_to_latex(q.equation.lhs) + " = " + expr_to_latex(q.equation.rhs)


def render_combination(combo: RuleCombination) -> list[str]:
    lines = [f"combination {combo.index}:"]
    for name, rule in combo.rules:
        detail = ""
        if rule.shape is PartitionShape.R2x2:
            detail = f" (rows {rule.split_rows}, cols {rule.split_cols})"
        elif rule.shape is PartitionShape.R2x1:
            detail = f" (rows {rule.split_rows})"
        elif rule.shape is PartitionShape.R1x2:
            detail = f" (cols {rule.split_cols})"
        lines.append(f"  {name}: {rule.shape.value}{detail}")
    return lines


def render_pme_text(pme: PME) -> list[str]:
    lines = [f"PME (combination {pme.combination.index}):"]
    texts = [[_cell_text(q) for q in row] for row in pme.cells]
    ncols = len(texts[0])
    widths = [max(len(row[j]) for row in texts) for j in range(ncols)]
    for row in texts:
        padded = [cell.ljust(widths[j]) for j, cell in enumerate(row)]
        lines.append("  [ " + " | ".join(padded).rstrip() + " ]")
    return lines


def render_pme_latex(pme: PME) -> list[str]:
    nr, nc = pme.shape
    spec = "|".join("c" * 1 for _ in range(nc))
    lines = [rf"\left( \begin{{array}}{{{spec}}}"]
    body_rows = []
    for row in pme.cells:
        body_rows.append(" & ".join(_cell_latex(q) for q in row))
    lines.append((" \\\\ \\hline\n".join(body_rows)))
    lines.append(r"\end{array} \right)")
    return lines


def pme_to_json_dict(pme: PME) -> dict:
    return {
        "operation": pme.operation,
        "combination": {
            "index": pme.combination.index,
            "rules": [
                {
                    "operand": name,
                    "shape": rule.shape.value,
                    "split_rows": rule.split_rows,
                    "split_cols": rule.split_cols,
                }
                for name, rule in pme.combination.rules
            ],
            "group_choices": [list(c) for c in pme.combination.group_choices],
        },
        "row_sizes": list(pme.row_sizes),
        "col_sizes": list(pme.col_sizes),
        "cells": [
            {
                "position": q.position,
                "status": q.status,
                "partner": q.partner,
                "equation": serialize_equation(q.equation),
            }
            for row in pme.cells
            for q in row
        ],
        "order": list(pme.order),
    }


def pme_from_json_dict(doc: dict) -> PME:
    combo = doc["combination"]
    rules = tuple(
        (
            r["operand"],
            PartitionRule(
                PartitionShape(r["shape"]),
                r["operand"],
                r["split_rows"],
                r["split_cols"],
            ),
        )
        for r in combo["rules"]
    )
    combination = RuleCombination(
        index=int(combo["index"]),
        rules=rules,
        group_choices=tuple((int(g), str(c)) for g, c in combo["group_choices"]),
    )
    row_sizes = tuple(doc["row_sizes"])
    col_sizes = tuple(doc["col_sizes"])
    names = position_names(len(row_sizes), len(col_sizes))
    by_pos = {
        c["position"]: QuadrantEquation(
            position=c["position"],
            equation=parse_prefix_equation(c["equation"]),
            status=c["status"],
            partner=c["partner"],
        )
        for c in doc["cells"]
    }
    cells = tuple(
        tuple(by_pos[names[i][j]] for j in range(len(col_sizes)))
        for i in range(len(row_sizes))
    )
    return PME(
        operation=doc["operation"],
        combination=combination,
        row_sizes=row_sizes,
        col_sizes=col_sizes,
        cells=cells,
        order=tuple(doc["order"]),
    )


def document_to_json(operation: str, pmes: Sequence[PME]) -> str:
    doc = {"operation": operation, "pmes": [pme_to_json_dict(p) for p in pmes]}
    return json.dumps(doc, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# commands


def _load_spec(path: str) -> OperationSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_operation(fh.read())


def _kb_path(args: argparse.Namespace) -> Optional[str]:
    return args.kb or os.environ.get("PME_KB") or None


def cmd_derive(args: argparse.Namespace) -> int:
    try:
        spec = _load_spec(args.op_file)
    except (OSError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    kb_path = _kb_path(args)
    try:
        kb = engine.load_kb(kb_path)
    except KnowledgeBaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.no_builtin:
        kb = kb.without_builtins(args.no_builtin)
    try:
        combinations = binding.enumerate_combinations(spec)
    except NoViablePartitioningsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_VIABLE
    except DimensionConflictError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    total = len(combinations)
    if args.combination is not None:
        if not 1 <= args.combination <= total:
            print(
                f"error: combination {args.combination} out of range 1..{total}",
                file=sys.stderr,
            )
            return EXIT_USAGE
        combinations = (combinations[args.combination - 1],)

    pmes: list[PME] = []
    stuck: list[str] = []
    header = f"combinations: {total}"
    if len(combinations) != total:
        header += f" (selected: {args.combination})"
    out: list[str] = [f"operation {spec.name}", header]
    for combo in combinations:
        out.append("")
        out.extend(render_combination(combo))
        try:
            pme = engine.derive_pme(spec, combo, kb, ops_dir=args.ops_dir)
        except StuckDerivation as exc:
            lines = [f"combination {combo.index}: stuck"]
            for q in exc.unsolved:
                lines.append(f"  unsolved {q.position}: {equation_to_text(q.equation)}")
            for note in exc.notes:
                lines.append(f"  note: {note}")
            stuck.extend(lines)
            out.extend(lines)
            continue
        pmes.append(pme)
        if args.format == "text":
            out.extend(render_pme_text(pme))
        elif args.format == "latex":
            out.append(f"PME (combination {pme.combination.index}):")
            out.extend(render_pme_latex(pme))
    if args.format == "json":
        # stdout stays machine-readable; diagnostics go to stderr
        print(document_to_json(spec.name, pmes))
        for line in stuck:
            print(line, file=sys.stderr)
    else:
        print("\n".join(out))
    if args.learn and pmes:
        if not kb_path:
            print("error: --learn needs --kb or PME_KB", file=sys.stderr)
            return EXIT_USAGE
        try:
            stored = engine.learn(spec, engine.load_kb(kb_path))
        except PatternConflictError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        engine.save_kb(stored, kb_path)
    # mirrors the aggregate error of the library pipeline: stuck only
    # when no selected combination could be completed
    return EXIT_STUCK if stuck and not pmes else EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    try:
        spec = _load_spec(args.op_file)
    except (OSError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        with open(args.pme_json, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        records = doc["pmes"] if "pmes" in doc else [doc]
        pmes = [pme_from_json_dict(d) for d in records]
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: cannot read {args.pme_json}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.trials == 0:
        print("warning: trials=0, nothing checked")
        return EXIT_OK
    failed = False
    for pme in pmes:
        report = oracle.check_pme(
            pme, spec, trials=args.trials, tolerance=args.tolerance, seed=args.seed
        )
        print(report.render())
        failed = failed or not report.ok
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_kb(args: argparse.Namespace) -> int:
    kb_path = _kb_path(args)
    try:
        kb = engine.load_kb(kb_path)
    except KnowledgeBaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.action == "list":
        for p in kb.builtins:
            print(f"{p.name} (builtin)")
        for p in kb.learned:
            print(f"{p.name} (learned)")
        return EXIT_OK
    if not args.name:
        print("error: kb show needs a pattern name", file=sys.stderr)
        return EXIT_USAGE
    pattern = kb.get(args.name)
    if pattern is None:
        print(f"error: no pattern named {args.name}", file=sys.stderr)
        return EXIT_PARSE
    print(f"pattern {pattern.name}")
    print(f"  provenance: {pattern.provenance}")
    print(f"  solve: {pattern.solution_operator or '-'}")
    print("  slots:")
    for s in pattern.slots:
        props = ", ".join(sorted(p.value for p in s.properties))
        suffix = f", {props}" if props else ""
        print(f"    {s.name}: {s.kind}, {s.io_role}{suffix}")
    print(f"  postcondition: {equation_to_text(pattern.template)}")
    print(f"  solved: {equation_to_text(pattern.solved)}")
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="pmegen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_derive = sub.add_parser("derive", help="derive PMEs for an operation file")
    p_derive.add_argument("op_file")
    p_derive.add_argument("--kb", default=None)
    p_derive.add_argument("--ops-dir", default=None)
    p_derive.add_argument(
        "--format", choices=("text", "latex", "json"), default="text"
    )
    p_derive.add_argument("--learn", action="store_true")
    p_derive.add_argument("--combination", type=int, default=None)
    p_derive.add_argument("--no-builtin", action="append", default=[])
    p_derive.set_defaults(func=cmd_derive)

    p_check = sub.add_parser("check", help="numerically verify PMEs")
    p_check.add_argument("op_file")
    p_check.add_argument("pme_json")
    p_check.add_argument("--trials", type=int, default=50)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--tolerance", type=float, default=1e-8)
    p_check.set_defaults(func=cmd_check)

    p_kb = sub.add_parser("kb", help="inspect the pattern knowledge base")
    p_kb.add_argument("action", choices=("list", "show"))
    p_kb.add_argument("name", nargs="?", default=None)
    p_kb.add_argument("--kb", default=None)
    p_kb.set_defaults(func=cmd_kb)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
