import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfaudit.core import Condition, DataError, TriageScale, UndefinedMetricError
from cfaudit.metrics import (
    METRICS, DirectionalCounts, MetricReport, cell_counts, directional_probs, dts, metrics_from_cells, nats,
    nmdf, pdr, point_report,
)
from conftest import make_preds, preds_from_cells

S14 = TriageScale(1, 4)


def naive_metrics(orig, cf, dirs):
    """Per-pair loop oracle, written straight from the metric definitions."""
    n = {"mf": 0, "fm": 0}
    up = {"mf": 0, "fm": 0}
    down = {"mf": 0, "fm": 0}
    changed, female_minus_male = 0, 0
    for o, c, d in zip(orig, cf, dirs):
        n[d] += 1
        up[d] += c > o
        down[d] += c < o
        changed += c != o
        female, male = (c, o) if d == "mf" else (o, c)
        female_minus_male += female - male
    p = lambda x, d: x[d] / n[d] if n[d] else math.nan
    total = n["mf"] + n["fm"]
    return {
        "pdr": changed / total,
        "p_down_mf": p(down, "mf"), "p_up_mf": p(up, "mf"),
        "p_down_fm": p(down, "fm"), "p_up_fm": p(up, "fm"),
        "dts_m_given_f": p(up, "fm") - p(down, "fm"),
        "dts_f_given_m": p(up, "mf") - p(down, "mf"),
        "nats_minus": p(down, "fm") - p(down, "mf"),
        "nats_plus": p(up, "fm") - p(up, "mf"),
        "nmdf": female_minus_male / total,
    }


def values(preds):
    return {k: float(v) for k, v in metrics_from_cells(cell_counts(preds)).items()}


def test_pdr_84_of_1000():
    orig = [3] * 1000
    cf = [4] * 50 + [2] * 34 + [3] * 916
    p = make_preds(orig, cf, ["mf", "fm"] * 500)
    assert pdr(p) == 0.084
    assert values(p)["pdr"] == pytest.approx(0.084, abs=1e-15)


def test_directional_probabilities_reproduce_published_frequencies():
    # 10,000 pairs per direction with counts equal to the published percentages
    p = preds_from_cells({
        ("mf", 2, 1): 1278, ("mf", 2, 3): 1475, ("mf", 2, 2): 10000 - 1278 - 1475,
        ("fm", 2, 1): 1571, ("fm", 2, 3): 1325, ("fm", 2, 2): 10000 - 1571 - 1325,
    }, S14)
    counts, probs = directional_probs(p)
    assert counts == DirectionalCounts(10000, 1475, 1278, 10000, 1325, 1571)
    assert probs == {"p_up_mf": 0.1475, "p_down_mf": 0.1278, "p_up_fm": 0.1325, "p_down_fm": 0.1571}
    plus, minus = nats(probs)
    assert plus == pytest.approx(-0.0150, abs=1e-12)
    assert minus == pytest.approx(0.0293, abs=1e-12)
    f_given_m, m_given_f = dts(probs)
    assert f_given_m == pytest.approx(0.0197, abs=1e-12)
    assert m_given_f == pytest.approx(-0.0246, abs=1e-12)


def test_nmdf_constructive_0011():
    # 11 of 500 M->F pairs get a one-level-higher female label; nothing else moves
    orig = [3] * 1000
    cf = [4] * 11 + [3] * 989
    dirs = ["mf"] * 500 + ["fm"] * 500
    p = make_preds(orig, cf, dirs)
    assert nmdf(p) == pytest.approx(0.011, abs=1e-15)
    assert values(p)["nmdf"] == pytest.approx(0.011, abs=1e-15)
    # the same shift on the F->M side is a male gain, so the sign flips
    p2 = make_preds(orig, cf, ["fm"] * 500 + ["mf"] * 500)
    assert nmdf(p2) == pytest.approx(-0.011, abs=1e-15)


def test_nmdf_counts_level_distance():
    p = make_preds([2, 5], [5, 2], ["mf", "fm"])
    # female - male: (5 - 2) and (5 - 2)
    assert nmdf(p) == 3.0


def test_empty_direction_is_undefined_not_zero():
    p = make_preds([2, 3], [3, 3], ["mf", "mf"])
    v = values(p)
    assert math.isnan(v["p_up_fm"]) and math.isnan(v["nats_plus"])
    assert v["p_up_mf"] == 0.5
    rep = point_report(cell_counts(p), Condition.FULL)
    assert set(rep.undefined) == {"p_down_fm", "p_up_fm", "dts_m_given_f", "nats_minus", "nats_plus"}
    assert rep["nats_plus"].point is None and rep["pdr"].point == 0.5
    _, probs = directional_probs(p)
    with pytest.raises(UndefinedMetricError):
        nats(probs)
    with pytest.raises(UndefinedMetricError):
        dts(probs)


def test_empty_prediction_set_is_a_data_error():
    p = make_preds([], [], [])
    with pytest.raises(DataError):
        pdr(p)
    assert point_report(cell_counts(p), Condition.FULL).undefined == METRICS


def test_report_round_trip():
    p = make_preds([2, 3, 4, 5], [3, 3, 2, 5], ["mf", "fm", "mf", "fm"])
    rep = point_report(cell_counts(p), Condition.FULL)
    again = MetricReport.from_dict(rep.to_dict())
    assert again.to_dict() == rep.to_dict()


pairs_strategy = st.lists(
    st.tuples(st.integers(2, 5), st.integers(2, 5), st.sampled_from(["mf", "fm"])), min_size=1, max_size=120)


@settings(max_examples=150, deadline=None)
@given(pairs_strategy)
def test_vectorised_metrics_match_loop_oracle(rows):
    orig, cf, dirs = zip(*rows)
    got = values(make_preds(orig, cf, dirs))
    want = naive_metrics(orig, cf, dirs)
    for m in METRICS:
        if math.isnan(want[m]):
            assert math.isnan(got[m])
        else:
            assert got[m] == pytest.approx(want[m], abs=1e-12), m


@settings(max_examples=100, deadline=None)
@given(pairs_strategy)
def test_metric_identities(rows):
    orig, cf, dirs = zip(*rows)
    v = values(make_preds(orig, cf, dirs))
    if not any(math.isnan(x) for x in v.values()):
        assert v["dts_f_given_m"] - v["dts_m_given_f"] == pytest.approx(v["nats_minus"] - v["nats_plus"], abs=1e-12)
        for d in ("mf", "fm"):
            assert 0 <= v[f"p_up_{d}"] + v[f"p_down_{d}"] <= 1
    assert 0 <= v["pdr"] <= 1
    assert abs(v["nmdf"]) <= 3


@settings(max_examples=100, deadline=None)
@given(pairs_strategy, st.randoms(use_true_random=False))
def test_row_order_does_not_matter(rows, rnd):
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    a = values(make_preds(*zip(*rows)))
    b = values(make_preds(*zip(*shuffled)))
    for m in METRICS:
        assert (math.isnan(a[m]) and math.isnan(b[m])) or a[m] == pytest.approx(b[m], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(pairs_strategy)
def test_relabelling_the_original_sex_negates_asymmetries(rows):
    orig, cf, dirs = zip(*rows)
    swapped = ["fm" if d == "mf" else "mf" for d in dirs]
    a = values(make_preds(orig, cf, dirs))
    b = values(make_preds(orig, cf, swapped))
    for m in ("nats_plus", "nats_minus", "nmdf"):
        if not math.isnan(a[m]):
            assert b[m] == pytest.approx(-a[m], abs=1e-12)
    assert b["pdr"] == a["pdr"]
    # presenting the same female/male labels the other way round leaves NMDF unchanged
    c = values(make_preds(cf, orig, swapped))
    assert c["nmdf"] == pytest.approx(a["nmdf"], abs=1e-12)


def test_batch_axis_evaluates_independently():
    p1 = make_preds([2, 3], [3, 3], ["mf", "fm"])
    p2 = make_preds([4, 4], [2, 5], ["fm", "mf"])
    stacked = np.stack([cell_counts(p1), cell_counts(p2)])
    batch = metrics_from_cells(stacked)
    for m in METRICS:
        np.testing.assert_allclose(batch[m], [values(p1)[m], values(p2)[m]])
