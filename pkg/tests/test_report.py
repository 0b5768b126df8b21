import pytest
from hypothesis import given
from hypothesis import strategies as st

from lowres_mt.report import (
    COLUMNS,
    EnergyParams,
    ReportInputError,
    ReportRow,
    compute_co2,
    emit_curves,
    emit_table,
    parse_curves,
    parse_table,
    ppl_minimum,
)


def test_co2_examples():
    assert compute_co2(14.43) == pytest.approx(14.43 * 0.175 * 0.324)
    assert round(compute_co2(14.43), 2) == 0.82
    assert compute_co2(5.0, EnergyParams(grid_intensity_g_per_kwh=0)) == 0.0
    assert compute_co2(0.0) == 0.0


def test_co2_rejects_bad_input():
    with pytest.raises(ReportInputError):
        compute_co2(-1.0)
    with pytest.raises(ReportInputError):
        EnergyParams(device_power_kw=-0.1)


pos = st.floats(0, 1e4, allow_nan=False)


@given(pos, pos, pos, st.floats(0.1, 10))
def test_co2_linear_in_each_factor(h, kw, g, k):
    base = compute_co2(h, EnergyParams(kw, g))
    assert compute_co2(k * h, EnergyParams(kw, g)) == pytest.approx(k * base, rel=1e-9, abs=1e-12)
    assert compute_co2(h, EnergyParams(k * kw, g)) == pytest.approx(k * base, rel=1e-9, abs=1e-12)
    assert compute_co2(h, EnergyParams(kw, k * g)) == pytest.approx(k * base, rel=1e-9, abs=1e-12)
    assert compute_co2(0, EnergyParams(kw, g)) == compute_co2(h, EnergyParams(0, g)) == compute_co2(h, EnergyParams(kw, 0)) == 0


def test_table_cell_formatting():
    row = ReportRow("trans-bpe16k", 60.5, 0.33, 0.78, 180_000, 26.90, 1.52)
    tsv = emit_table([row])
    header, line = tsv.splitlines()
    assert header.split("\t") == list(COLUMNS)
    assert "60.5\t0.33\t0.78" in line
    assert line.split("\t")[4] == "180k"


def test_markdown_table():
    rows = [ReportRow.build("a", 1.234, 0.5, 0.61, 2000, 0.5), ReportRow.build("bb", 10, 1.5, 0.2, 1500, 2.0)]
    md = emit_table(rows, "markdown")
    lines = md.splitlines()
    assert len(lines) == 4 and lines[1].startswith("|--")
    assert len({len(x) for x in lines}) == 1
    assert parse_table(md) == [r.rounded() for r in rows]


def test_row_build_uses_energy_params():
    row = ReportRow.build("x", 1, 1, 1, 10, 2.0, EnergyParams(0.5, 100))
    assert row.kg_co2 == pytest.approx(0.1)


def test_empty_table():
    with pytest.raises(ReportInputError):
        emit_table([])
    with pytest.raises(ValueError):
        emit_table([ReportRow.build("x", 1, 1, 1, 1, 1)], "html")


label = st.text(st.characters(whitelist_categories=("L", "N"), whitelist_characters="-_ "), min_size=1, max_size=15).map(str.strip).filter(bool)
rows = st.builds(
    ReportRow.build,
    label,
    st.floats(0, 100),
    st.floats(0, 3),
    st.floats(0, 1),
    st.integers(0, 300_000),
    st.floats(0, 100),
)


@given(st.lists(rows, min_size=1, max_size=6), st.sampled_from(["tsv", "markdown"]))
def test_table_round_trip(rs, fmt):
    parsed = parse_table(emit_table(rs, fmt))
    assert parsed == [r.rounded() for r in rs]
    assert emit_table(parsed, fmt) == emit_table(rs, fmt)


def test_curves_summary():
    history = [
        {"step": 500, "val_accuracy": 40.0, "val_ppl": 9.1},
        {"step": 1000, "val_accuracy": 55.0, "val_ppl": 2.7},
        {"step": 1500, "val_accuracy": 56.0, "val_ppl": 2.9},
    ]
    text = emit_curves(history)
    assert text.splitlines()[0] == "step,val_accuracy,val_ppl"
    assert text.splitlines()[-1] == "# ppl_min=2.70 step=1000"
    parsed, summary = parse_curves(text)
    assert [h["step"] for h in parsed] == [500, 1000, 1500]
    assert summary == {"ppl_min": 2.7, "step": 1000}


def test_single_point_curve():
    text = emit_curves([{"step": 7, "val_accuracy": 1.0, "val_ppl": 3.0}])
    assert "7,1.0000,3.000000" in text
    assert text.endswith("# ppl_min=3.00 step=7\n")


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(1, 1000)), min_size=1, max_size=30))
def test_curve_minimum_matches_brute_force(points):
    history = [{"step": 100 * (i + 1), "val_accuracy": a, "val_ppl": p} for i, (a, p) in enumerate(points)]
    ppl, step = ppl_minimum(history)
    assert ppl == min(p for _, p in points)
    assert step == 100 * (1 + [p for _, p in points].index(ppl))
    _, summary = parse_curves(emit_curves(history))
    assert summary["ppl_min"] == round(ppl, 2) and summary["step"] == step


def test_empty_history():
    with pytest.raises(ReportInputError):
        emit_curves([])
