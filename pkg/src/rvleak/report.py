"""Plain-text contract tables and precision/sensitivity curves."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .evaluator import EvalResult, Metrics, score
from .synth import DEFAULT_NODE_BUDGET, build_problem, solve
from .template import FAMILIES, Template, family_of

CATEGORIES: dict[str, tuple[str, ...]] = {
    "arithmetic": ("LUI", "AUIPC", "ADDI", "SLTI", "SLTIU", "XORI", "ORI", "ANDI", "SLLI", "SRLI", "SRAI",
                   "ADD", "SUB", "SLL", "SLT", "SLTU", "XOR", "SRL", "SRA", "OR", "AND"),
    "div-rem": ("DIV", "DIVU", "REM", "REMU"),
    "mul": ("MUL", "MULH", "MULHSU", "MULHU"),
    "loads": ("LB", "LH", "LW", "LBU", "LHU"),
    "stores": ("SB", "SH", "SW"),
    "branches": ("BEQ", "BNE", "BLT", "BGE", "BLTU", "BGEU"),
    "jumps": ("JAL", "JALR"),
}

ALL, SOME, NONE, NOT_APPLICABLE = "●", "◐", "○", "−"


def glyph(template: Template, selected: Iterable[str], category: str, family: str) -> str:
    """● every applicable instruction of the category leaks through the family, ◐ some, ○ none, − no atom exists."""
    sel = frozenset(selected)
    applicable = leaking = 0
    for m in CATEGORIES[category]:
        ids = [f"{m}:{s}" for s in template.sources(m) if family_of(s) == family]
        if not ids:
            continue
        applicable += 1
        leaking += any(a in sel for a in ids)
    if not applicable:
        return NOT_APPLICABLE
    if leaking == applicable:
        return ALL
    return SOME if leaking else NONE


def category_table(template: Template, selected: Iterable[str]) -> str:
    sel = frozenset(selected)
    width = max(len(c) for c in CATEGORIES)
    lines = [" " * width + "  " + "  ".join(FAMILIES)]
    for cat in CATEGORIES:
        cells = "  ".join(glyph(template, sel, cat, f).ljust(2) for f in FAMILIES)
        lines.append(f"{cat.ljust(width)}  {cells}".rstrip())
    lines.append(f"legend: {ALL} all leak  {SOME} some leak  {NONE} none leak  {NOT_APPLICABLE} not applicable")
    return "\n".join(lines) + "\n"


def prefix_sizes(n: int, points: int = 10, smallest: int = 10) -> list[int]:
    """Up to ``points`` logarithmically spaced sizes from min(smallest, n) to n inclusive."""
    if n <= 0:
        return []
    lo = min(smallest, n)
    if points <= 1 or lo == n:
        return [n]
    sizes = {round(lo * (n / lo) ** (i / (points - 1))) for i in range(points)}
    return sorted(sizes)


@dataclass(frozen=True)
class CurvePoint:
    train_size: int
    precision: Optional[float]
    sensitivity: Optional[float]


def curve(train: Sequence[EvalResult], heldout: Sequence[EvalResult], template: Template,
          solver: str = "exact", node_budget: int = DEFAULT_NODE_BUDGET, points: int = 10) -> list[CurvePoint]:
    """Re-synthesize on training prefixes and score each contract on the held-out results."""
    out = []
    for k in prefix_sizes(len(train), points):
        result = solve(build_problem(train[:k], template.ids), solver, node_budget)
        m = score(result.selected, heldout)
        out.append(CurvePoint(k, m.precision, m.sensitivity))
    return out


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.6f}"


def curve_csv(points: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("train_size", "precision", "sensitivity"))
    for p in points:
        w.writerow((p.train_size, _fmt(p.precision), _fmt(p.sensitivity)))
    return buf.getvalue()


def metrics_line(label: str, m: Metrics) -> str:
    p = "n/a" if m.precision is None else f"{m.precision:.4f}"
    s = "n/a" if m.sensitivity is None else f"{m.sensitivity:.4f}"
    return f"{label}: tp={m.tp} fp={m.fp} fn={m.fn} tn={m.tn} precision={p} sensitivity={s}"
