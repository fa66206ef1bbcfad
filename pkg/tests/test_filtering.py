import json
import math
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from cfaudit.core import ConfigError, TriageScale, read_records
from cfaudit.filtering import REASONS, FilterConfig, RecordFilter, filter_dataset, stratified_split
from cfaudit.lexicons import EN_STEMS, FR_STEMS, default_lexicon
from conftest import FIXTURES, record


def bordeaux_cfg(**kw):
    return FilterConfig(default_lexicon("fr"), TriageScale(1, 5), min_date="2016-01-01",
                        excluded_labels={1}, **kw)


def dated(**kw):
    kw.setdefault("admission_time", "2018-03-04T08:00:00")
    return record(**kw)


def test_lexicon_sizes():
    assert sum(len(v) for v in FR_STEMS.values()) == 36
    assert sum(len(v) for v in EN_STEMS.values()) == 31


@pytest.mark.parametrize("rec, reason", [
    (dated(admission_time="2015-12-31"), "pre_date"),
    (record(), "missing_field"),
    (dated(age=17), "under_age"),
    (dated(label=1), "excluded_label"),
    (dated(label=9), "excluded_label"),
    (dated(cc="Recent pelvic or genital pain"), "excluded_chief_complaint"),
    (dated(hpi="Douleur, suivi pour adénome prostatique"), "lexicon"),
    (dated(pmh="Grossesse en cours"), "lexicon"),
])
def test_each_rule_reports_its_reason(rec, reason):
    res = filter_dataset([rec], bordeaux_cfg())
    assert not res.kept
    assert res.rejected[0]["reason"] == reason


def test_cascade_order_first_rule_wins():
    # under age and lexicon hit at once: age is checked first
    res = filter_dataset([dated(age=10, hpi="grossesse")], bordeaux_cfg())
    assert res.rejected[0]["reason"] == "under_age"


def test_missing_required_values_and_empty_text():
    r = dated(hpi="", pmh="")
    res = filter_dataset([r, dated(label=None)], bordeaux_cfg())
    assert [x["detail"] for x in res.rejected] == ["text", "label"]


def test_malformed_lines_are_logged_and_skipped():
    good = json.dumps(dated(rid="ok").to_dict())
    res = filter_dataset(["{not json", good, json.dumps({"id": "x", "sex": "Q"})], bordeaux_cfg())
    assert [r.id for r in res.kept] == ["ok"]
    assert [x["reason"] for x in res.rejected] == ["parse_error", "parse_error"]
    assert res.rejected[1]["id"] == "x"
    assert set(res.summary()["reasons"]) == set(REASONS)


def test_stems_match_case_insensitively_inside_words():
    lex = default_lexicon("en")
    assert lex.find("POSTMENOPAUSAL bleeding") == ["menopaus"]
    # substring matching accepts known false hits such as "computer"
    assert "uter" in lex.find("works at a computer")


def test_config_from_dict_validates():
    cfg = FilterConfig.from_dict({"language": "en", "scale": {"min": 1, "max": 5}, "excluded_labels": [5]})
    assert cfg.excluded_labels == {5}
    with pytest.raises(ConfigError):
        FilterConfig.from_dict({"language": "en", "scale": {"min": 1, "max": 5}, "bogus": 1})
    with pytest.raises(ConfigError):
        FilterConfig.from_dict({"scale": {"min": 1, "max": 5}})
    with pytest.raises(ConfigError):
        FilterConfig.from_dict({"language": "en", "scale": {"min": 1, "max": 5}, "excluded_labels": [7]})


def test_record_filter_is_a_clonable_transformer():
    f = RecordFilter(language="en", scale=(1, 5), excluded_labels=(5,))
    assert clone(f).get_params() == f.get_params()
    recs = read_records(FIXTURES / "clean_en.jsonl")
    kept = f.fit_transform(recs + [record(rid="z", hpi="prostate cancer", label=2)])
    assert [r.id for r in kept] == [r.id for r in recs]
    assert f.rejected_[0]["id"] == "z"


# Stratified split ------------------------------------------------------------

def _labelled(labels):
    return [record(rid=f"r{i}", label=lab) for i, lab in enumerate(labels)]


def test_split_on_101_records_against_brute_force_quota():
    labels = [2] * 17 + [3] * 42 + [4] * 35 + [5] * 7
    recs = _labelled(labels)
    train, test = stratified_split(recs, 0.5, seed=3)
    # oracle: every label gets floor or ceil of half its count, total is round(N/2)
    counts = Counter(labels)
    got = Counter(r.label for r in train)
    for lab, n in counts.items():
        assert got[lab] in {math.floor(n / 2), math.ceil(n / 2)}
    assert len(train) == round(101 * 0.5)
    ids = [r.id for r in recs]
    assert sorted(r.id for r in train + test) == sorted(ids)
    assert not {r.id for r in train} & {r.id for r in test}
    assert [r.id for r in train] == [i for i in ids if i in {r.id for r in train}]


def test_split_is_seeded():
    recs = _labelled([2, 3, 4, 5] * 25)
    a = stratified_split(recs, 0.5, seed=11)
    b = stratified_split(recs, 0.5, seed=11)
    c = stratified_split(recs, 0.5, seed=12)
    assert [r.id for r in a[0]] == [r.id for r in b[0]]
    assert [r.id for r in a[0]] != [r.id for r in c[0]]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(2, 5), min_size=2, max_size=80), st.floats(0.1, 0.9), st.integers(0, 2**16))
def test_split_quota_property(labels, fraction, seed):
    train, test = stratified_split(_labelled(labels), fraction, seed)
    got = Counter(r.label for r in train)
    for lab, n in Counter(labels).items():
        assert math.floor(fraction * n) <= got[lab] <= math.ceil(fraction * n)
    assert len(train) + len(test) == len(labels)


def test_split_rejects_bad_fraction():
    with pytest.raises(ConfigError):
        stratified_split(_labelled([2, 3]), 1.0, 0)
