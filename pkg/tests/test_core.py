import json

import numpy as np
import pytest

from cfaudit.core import (
    Condition, ConfigError, CounterfactualPair, DataError, DecisionRecord, Direction, IndexSet,
    PredictionSet, Quality, Sex, TriageScale, check_pair, make_variant, read_jsonl, write_jsonl,
)
from conftest import make_preds, record


def test_sex_parsing_accepts_codes_and_words():
    assert Sex.parse("M") is Sex.MALE
    assert Sex.parse(" femme ") is Sex.FEMALE
    assert Sex.parse(1) is Sex.FEMALE
    assert Sex.MALE.flip() is Sex.FEMALE
    for bad in ("X", 2, True, None):
        with pytest.raises(DataError):
            Sex.parse(bad)


def test_scale_membership_and_validation():
    s = TriageScale(2, 5)
    assert s.k == 4 and list(s.levels) == [2, 3, 4, 5]
    assert 2 in s and 5 in s and 1 not in s and 6 not in s
    assert True not in s
    with pytest.raises(ConfigError):
        TriageScale(3, 3)
    with pytest.raises(DataError):
        s.check(7)


def test_record_round_trip_and_rejections():
    r = record(cc="Chest pain", pmh="HTA", heart_rate=88)
    again = DecisionRecord.from_dict(json.loads(json.dumps(r.to_dict())))
    assert again == r
    assert r.text == "Chest pain Douleur thoracique HTA"
    base = r.to_dict()
    for patch in ({"id": ""}, {"label": 2.5}, {"age": "old"}, {"hpi": 3}, {"schema": "v9"}, {"sex": "?"}):
        with pytest.raises(DataError):
            DecisionRecord.from_dict({**base, **patch})


def test_variants_hide_the_right_modality():
    r = record(cc="cc", hpi="he is sick", pmh="none")
    text_iso = make_variant(r, Condition.TEXT_ISO)
    assert text_iso.sex is None and text_iso.hpi == r.hpi
    tab_iso = make_variant(r, Condition.TAB_ISO)
    assert tab_iso.sex is r.sex and tab_iso.text == ""
    assert make_variant(r, Condition.FULL) is r


def _pair(orig_sex="M", cf_sex="F", direction=Direction.M_TO_F, cf_age=50):
    o = record(sex=orig_sex)
    c = DecisionRecord("r1", Sex.parse(cf_sex), cf_age, {}, "", "x", "", 3)
    return CounterfactualPair("r1", o, c, direction)


def test_pair_invariants():
    check_pair(_pair())
    with pytest.raises(DataError):
        check_pair(_pair(cf_sex="M"))
    with pytest.raises(DataError):
        check_pair(_pair(direction=Direction.F_TO_M))
    with pytest.raises(DataError):
        check_pair(_pair(cf_age=51))


def test_pair_round_trip():
    p = _pair()
    p2 = CounterfactualPair.from_dict(json.loads(json.dumps(p.to_dict())))
    assert p2.pair_id == p.pair_id and p2.direction is Direction.M_TO_F
    assert p2.cf_quality is Quality.UNVALIDATED


def test_index_set_rejects_duplicates_and_digest_tracks_order():
    with pytest.raises(DataError):
        IndexSet(("a", "a"))
    assert IndexSet(("a", "b")).digest != IndexSet(("b", "a")).digest
    assert IndexSet(("a", "b")).digest == IndexSet(["a", "b"]).digest


def test_prediction_set_rows_round_trip(tmp_path):
    p = make_preds([2, 3, 4], [3, 3, 2], ["mf", "fm", "mf"], reference=[2, 3, 4])
    path = tmp_path / "preds.jsonl"
    write_jsonl(path, p.to_rows())
    back = PredictionSet.from_rows(read_jsonl(path), TriageScale(2, 5))
    assert back.index_set == p.index_set
    np.testing.assert_array_equal(back.labels[Condition.FULL], p.labels[Condition.FULL])
    np.testing.assert_array_equal(back.directions, p.directions)
    np.testing.assert_array_equal(back.reference, p.reference)


def test_prediction_set_rejects_labels_off_scale():
    with pytest.raises(DataError):
        make_preds([1, 3], [3, 3], ["mf", "fm"])


def test_condition_parse_list():
    assert Condition.parse_list("full, text-iso,tab_iso,full") == (Condition.FULL, Condition.TEXT_ISO, Condition.TAB_ISO)
    with pytest.raises(ConfigError):
        Condition.parse_list(" , ")
