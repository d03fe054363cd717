import csv
import io

from hypothesis import given, strategies as st

from rvleak.evaluator import EvalResult, Metrics
from rvleak.report import (CATEGORIES, CurvePoint, category_table, curve, curve_csv, glyph, metrics_line,
                           prefix_sizes)
from rvleak.template import FAMILIES, build_template

T = build_template()


def test_glyph_examples():
    assert glyph(T, set(), "loads", "AL") == "○"
    assert glyph(T, {"LW:IS_WORD_ALIGNED"}, "loads", "AL") == "◐"
    every_load = {f"{m}:IS_HALF_ALIGNED" for m in CATEGORIES["loads"]}
    assert glyph(T, every_load, "loads", "AL") == "●"
    assert glyph(T, {f"{m}:BRANCH_TAKEN" for m in CATEGORIES["branches"]}, "branches", "BL") == "●"
    assert glyph(T, {"BEQ:NEW_PC"}, "branches", "BL") == "◐"
    assert glyph(T, set(T.ids), "arithmetic", "ML") == "−"
    assert glyph(T, set(T.ids), "div-rem", "RL") == "●"
    # a family removed from the template has no applicable atoms at all
    assert glyph(T.without("DL"), set(), "mul", "DL") == "−"


def test_every_category_covers_its_mnemonics_once():
    listed = [m for ms in CATEGORIES.values() for m in ms]
    assert len(listed) == len(set(listed))
    assert set(listed) == {a.inst_type for a in T.atoms}


def test_category_table_layout():
    lines = category_table(T, {"DIV:REG_RS1"}).splitlines()
    assert lines[0].split() == list(FAMILIES)
    assert [ln.split()[0] for ln in lines[1:-1]] == list(CATEGORIES)
    assert lines[2].split() == ["div-rem", "○", "◐", "−", "−", "−", "○"]
    assert lines[-1].startswith("legend:")


def test_prefix_sizes_examples():
    assert prefix_sizes(10_000, 5) == [10, 56, 316, 1778, 10_000]
    assert prefix_sizes(5) == [5]
    assert prefix_sizes(0) == []
    assert prefix_sizes(100, 1) == [100]


@given(st.integers(1, 100_000), st.integers(1, 30))
def test_prefix_sizes_properties(n, points):
    sizes = prefix_sizes(n, points)
    assert sizes == sorted(set(sizes))
    assert sizes[-1] == n
    assert sizes[0] == (min(10, n) if points > 1 else n)
    assert len(sizes) <= max(points, 1)


def test_curve_on_training_data_ends_at_full_sensitivity():
    rows = [("a", True, {"DIV:REG_RS1"}), ("b", False, {"ADD:OP"}), ("c", True, {"BEQ:BRANCH_TAKEN"}),
            ("d", False, {"BEQ:BRANCH_TAKEN", "BEQ:OP"}), ("e", True, {"LW:IS_WORD_ALIGNED", "LW:IMM"})] * 4
    results = [EvalResult(f"t{i:02d}", atk, frozenset(s)) for i, (_, atk, s) in enumerate(rows)]
    pts = curve(results, results, T, points=3)
    assert [p.train_size for p in pts] == [10, 14, 20]
    assert pts[-1].sensitivity == 1.0
    # hand count: BEQ:BRANCH_TAKEN is forced and fires on the four "d" rows
    assert pts[-1].precision == 12 / 16


def test_curve_csv_and_metrics_line():
    text = curve_csv([CurvePoint(10, None, 0.0), CurvePoint(100, 0.5, 1.0)])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows == [["train_size", "precision", "sensitivity"], ["10", "", "0.000000"],
                    ["100", "0.500000", "1.000000"]]
    assert metrics_line("x", Metrics(3, 1, 0, 2)) == \
        "x: tp=3 fp=1 fn=0 tn=2 precision=0.7500 sensitivity=1.0000"
    assert "precision=n/a" in metrics_line("x", Metrics(0, 0, 1, 1))
