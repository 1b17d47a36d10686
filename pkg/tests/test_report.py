"""Post-processing: histograms, correlations, county aggregation, figures."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridpulse.campaign import run_campaign
from gridpulse.report import (
    DegenerateInput,
    EmptyInput,
    MissingField,
    county_aggregates,
    emit_figures,
    histogram,
    load_records,
    pearson,
)
from gridpulse.sensitivity import lodf, si_count

from test_campaign import small_spec
from oracles import histogram_loop_ref, pearson_direct

EXPECTED_FILES = {
    "fig02_bus_bf.geojson",
    "fig03_lf_hist.csv",
    "fig03_lf_hist.svg",
    "fig04_bf_by_scenario.csv",
    "fig05_lf_by_county.geojson",
    "fig06_popdensity.geojson",
    "fig07_corr.csv",
    "fig08_si_total.geojson",
    "fig09_si_norm.geojson",
    "fig10_gs_vs_si.csv",
    "fig11_gs_vs_bf.csv",
    "fig12_slack_dp_hist.csv",
    "fig12_slack_dp_hist.svg",
    "fig13_genloading_hist.csv",
    "fig13_genloading_hist.svg",
    "correlations.json",
}


# ----------------------------------------------------------------------
# histogram


def test_histogram_known_small_sample():
    edges, counts = histogram([1.0, 2.0, 3.0, 10.0], bins=4)
    assert edges == [1.0, 3.25, 5.5, 7.75, 10.0]
    assert counts == [3, 0, 0, 1]


def test_histogram_maximum_lands_in_last_bin():
    _, counts = histogram([0.0, 1.0], bins=10)
    assert counts[-1] == 1
    assert sum(counts) == 2


def test_histogram_all_equal_occupies_one_bin():
    edges, counts = histogram([5.0, 5.0, 5.0], bins=4)
    assert edges[0] == 4.5
    assert edges[-1] == 5.5
    assert sum(counts) == 3
    assert sum(1 for c in counts if c) == 1


def test_histogram_empty_raises():
    with pytest.raises(EmptyInput):
        histogram([])


def test_histogram_bad_bins():
    with pytest.raises(ValueError):
        histogram([1.0], bins=0)


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=200),
    st.integers(min_value=1, max_value=40),
)
def test_histogram_matches_reference_loop(values, bins):
    edges, counts = histogram(values, bins)
    ref_edges, ref_counts = histogram_loop_ref(values, bins)
    assert sum(counts) == len(values)
    assert counts == ref_counts
    assert edges == pytest.approx(ref_edges)


# ----------------------------------------------------------------------
# pearson


def test_pearson_perfect_positive():
    assert pearson([1, 2, 3, 4], [2, 4, 6, 8]) == 1.0


def test_pearson_perfect_negative():
    assert pearson([1, 2, 3, 4], [8, 6, 4, 2]) == -1.0


def test_pearson_matches_numpy():
    rng = np.random.default_rng(12)
    xs = rng.normal(size=80)
    ys = 0.4 * xs + rng.normal(size=80)
    assert pearson(xs, ys) == pytest.approx(np.corrcoef(xs, ys)[0, 1], abs=1e-12)


def test_pearson_matches_direct_formula():
    xs = [3.0, 1.5, -2.0, 8.0, 0.25]
    ys = [1.0, 0.5, 2.25, -1.0, 4.0]
    assert pearson(xs, ys) == pytest.approx(pearson_direct(xs, ys), abs=1e-12)


def test_pearson_zero_variance_degenerate():
    with pytest.raises(DegenerateInput):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateInput):
        pearson([1.0, 2.0, 3.0], [7.0, 7.0, 7.0])


def test_pearson_needs_three_samples():
    with pytest.raises(ValueError):
        pearson([1.0, 2.0], [3.0, 4.0])


def test_pearson_length_mismatch():
    with pytest.raises(ValueError):
        pearson([1.0, 2.0, 3.0], [1.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.floats(min_value=-100, max_value=100),
            st.floats(min_value=-100, max_value=100),
        ),
        min_size=3,
        max_size=50,
    ),
    st.floats(min_value=0.1, max_value=10.0),
    st.floats(min_value=-50.0, max_value=50.0),
)
def test_pearson_affine_invariant(pairs, scale, shift):
    from hypothesis import assume

    xs = [p[0] for p in pairs]
    ys = [p[1] for p in pairs]
    # Keep the x spread large enough that the shift cannot absorb it in
    # floating point and manufacture a zero-variance input.
    assume(max(xs) - min(xs) > 1e-6)
    try:
        base = pearson(xs, ys)
    except DegenerateInput:
        return
    shifted = pearson([scale * x + shift for x in xs], ys)
    assert shifted == pytest.approx(base, abs=1e-7)
    assert -1.0 <= base <= 1.0


# ----------------------------------------------------------------------
# record loading


def test_load_records_sorts_and_dedupes(tmp_path):
    lines = [
        {"scenario_id": "c0002-k0-r0", "lf_total": 2},
        {"scenario_id": "c0001-k0-r0", "lf_total": 1},
        {"scenario_id": "c0002-k0-r0", "lf_total": 99},  # duplicate, ignored
    ]
    text = "\n".join(json.dumps(l) for l in lines) + "\n" + '{"torn'
    (tmp_path / "records.jsonl").write_text(text)
    recs = load_records(tmp_path)
    assert [r["scenario_id"] for r in recs] == ["c0001-k0-r0", "c0002-k0-r0"]
    assert recs[1]["lf_total"] == 2


def test_load_records_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_records(tmp_path)


# ----------------------------------------------------------------------
# county aggregation (uses a real small campaign for realistic records)


@pytest.fixture(scope="module")
def campaign_out(tmp_path_factory):
    from conftest import load_fixture

    case = load_fixture("case5")
    out = tmp_path_factory.mktemp("campaign")
    res = run_campaign(case, small_spec(), out)
    return case, out, res


def test_county_sums_match_records(campaign_out):
    case, _, res = campaign_out
    aggs = county_aggregates(res.records, case)
    by_id = {a.county_id: a for a in aggs}
    assert set(by_id) == {c.id for c in case.counties}
    for cid, a in by_id.items():
        recs = [r for r in res.records if r["county_id"] == cid]
        assert a.scenarios == len(recs)
        assert a.lf_sum == sum(r["lf_total"] for r in recs)
        assert a.bf_sum == sum(r["bf_total"] for r in recs)


def test_county_si_comes_from_intact_case(campaign_out):
    case, _, res = campaign_out
    aggs = county_aggregates(res.records, case, si_threshold=0.03)
    table = si_count(lodf(case), 0.03, case)
    for a in aggs:
        assert a.si_total == table.county_totals.get(a.county_id, 0)
        assert a.si_normalized == table.county_normalized.get(a.county_id, 0.0)


def test_unknown_county_raises(campaign_out):
    case, _, res = campaign_out
    tainted = [dict(res.records[0], county_id=404)] + res.records[1:]
    with pytest.raises(MissingField):
        county_aggregates(tainted, case)


def test_missing_columns_raise_with_ids(campaign_out):
    case, _, res = campaign_out
    broken = [dict(r) for r in res.records]
    del broken[1]["lf_total"]
    del broken[3]["lf_total"]
    with pytest.raises(MissingField) as err:
        county_aggregates(broken, case)
    assert broken[1]["scenario_id"] in str(err.value)


# ----------------------------------------------------------------------
# figure emission


def test_emit_figures_writes_expected_set(campaign_out, tmp_path):
    case, _, res = campaign_out
    fig_dir = tmp_path / "figs"
    written = emit_figures(res.records, case, fig_dir)
    assert {p.name for p in written} == EXPECTED_FILES
    assert {p.name for p in fig_dir.iterdir()} == EXPECTED_FILES


def test_emit_figures_is_byte_deterministic(campaign_out, tmp_path):
    case, _, res = campaign_out
    d1 = tmp_path / "a"
    d2 = tmp_path / "b"
    emit_figures(res.records, case, d1)
    emit_figures(res.records, case, d2)
    for name in EXPECTED_FILES:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name


def test_histogram_csv_counts_sum_to_scenarios(campaign_out, tmp_path):
    case, _, res = campaign_out
    fig_dir = tmp_path / "figs"
    emit_figures(res.records, case, fig_dir)
    for name in ("fig03_lf_hist.csv", "fig12_slack_dp_hist.csv", "fig13_genloading_hist.csv"):
        rows = (fig_dir / name).read_text().splitlines()[1:]
        total = sum(int(r.split(",")[-1]) for r in rows)
        assert total == len(res.records), name


def test_geojson_features_are_valid(campaign_out, tmp_path):
    case, _, res = campaign_out
    fig_dir = tmp_path / "figs"
    emit_figures(res.records, case, fig_dir)
    fc = json.loads((fig_dir / "fig02_bus_bf.geojson").read_text())
    assert fc["type"] == "FeatureCollection"
    assert len(fc["features"]) == len(case.buses)
    total_from_geo = sum(f["properties"]["failures"] for f in fc["features"])
    assert total_from_geo == sum(len(r["failed_buses"]) for r in res.records)
    for f in fc["features"]:
        lon, lat = f["geometry"]["coordinates"]
        assert -180.0 <= lon <= 180.0
        assert -90.0 <= lat <= 90.0


def test_scenario_csv_row_per_record(campaign_out, tmp_path):
    case, _, res = campaign_out
    fig_dir = tmp_path / "figs"
    emit_figures(res.records, case, fig_dir)
    for name in ("fig04_bf_by_scenario.csv", "fig10_gs_vs_si.csv", "fig11_gs_vs_bf.csv"):
        rows = (fig_dir / name).read_text().splitlines()
        assert len(rows) == len(res.records) + 1, name


def test_correlations_json_structure(campaign_out, tmp_path):
    case, _, res = campaign_out
    fig_dir = tmp_path / "figs"
    emit_figures(res.records, case, fig_dir)
    corr = json.loads((fig_dir / "correlations.json").read_text())
    assert set(corr) == {"lf_vs_pop_density", "gs_vs_si", "gs_vs_bf"}
    for entry in corr.values():
        assert "r" in entry and "n" in entry
        if entry["r"] is not None:
            assert -1.0 <= entry["r"] <= 1.0
            assert math.isfinite(entry["r"])


def test_emit_figures_rejects_empty():
    from conftest import four_bus_mesh

    with pytest.raises(MissingField):
        emit_figures([], four_bus_mesh(), "/tmp/unused")


def test_emit_figures_validates_before_writing(campaign_out, tmp_path):
    case, _, res = campaign_out
    broken = [dict(r) for r in res.records]
    for r in broken:
        del r["gs_total_mw"]
    target = tmp_path / "untouched"
    with pytest.raises(MissingField):
        emit_figures(broken, case, target)
    assert not target.exists() or not any(target.iterdir())


def test_emit_figures_needs_matching_threshold(campaign_out, tmp_path):
    case, _, res = campaign_out
    with pytest.raises(MissingField):
        emit_figures(res.records, case, tmp_path / "x", si_threshold=0.42)
