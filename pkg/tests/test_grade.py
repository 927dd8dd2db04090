import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from scmgym.exceptions import JoinError
from scmgym.grade import COLUMNS, GradeResult, aggregate, parse_final_answer, render_answer, score
from scmgym.questions import LACK_CONDITION


@pytest.mark.parametrize("text, mode, expected", [
    ('blah {"answer": "yes"}', "binary", "yes"),
    ('{"answer": "YES"}', "binary", "yes"),
    ('first {"answer": "no"} then {"answer": "yes"}', "binary", "yes"),
    ("so the answer is No", "binary", "no"),
    ('{"answer": 0.1234}', "numeric", 0.1234),
    ('{"answer": "-0.5"}', "numeric", -0.5),
    ("value is 0.2 then finally 0.3", "numeric", 0.3),
    ('{"answer": [0.1, 0.9]}', "bounds", (0.1, 0.9)),
    ("bounds: [0.25, 0.75]", "bounds", (0.25, 0.75)),
    ('{"answer": "LACK_CONDITION"}', "binary", LACK_CONDITION),
    ("I would say lack_condition", "bounds", LACK_CONDITION),
    ("", "binary", None),
    ("no idea", "numeric", None),
    ('{"answer": "maybe"}', "binary", None),
    ('{"answer": [0.1]}', "bounds", None),
])
def test_parse_final_answer(text, mode, expected):
    assert parse_final_answer(text, mode) == expected


def test_malformed_json_falls_back_to_lines():
    assert parse_final_answer('{"answer": "yes"\nso the answer is no', "binary") == "no"


def test_score_cases():
    assert score("yes", "yes", "binary").correct
    assert score("no", "yes", "binary").failure_kind == "wrong"
    assert score(None, "yes", "binary").failure_kind == "parse"
    assert score(LACK_CONDITION, "yes", "binary").failure_kind == "spurious_lack_condition"
    assert score("yes", LACK_CONDITION, "binary").failure_kind == "missing_lack_condition"
    assert score(LACK_CONDITION, LACK_CONDITION, "bounds").correct
    assert score(0.12344, 0.1234, "numeric").correct
    assert not score(0.1236, 0.1234, "numeric").correct
    assert score(0.1236, 0.1234, "numeric", tolerance=0.0005).correct
    assert score((0.1, 0.9), (0.1, 0.9), "bounds").correct
    assert not score((0.1, 0.8), (0.1, 0.9), "bounds").correct


def test_grade_result_invariants():
    with pytest.raises(ValueError):
        GradeResult("a", "yes", True, "wrong")
    with pytest.raises(ValueError):
        GradeResult("a", "yes", False, "bogus")


answers = st.one_of(
    st.sampled_from(["yes", "no", LACK_CONDITION]).map(lambda a: (a, "binary")),
    st.integers(-10000, 10000).map(lambda k: (k / 10000, "numeric")),
    st.tuples(st.integers(0, 10000), st.integers(0, 10000))
      .map(lambda p: ((min(p) / 10000, max(p) / 10000), "bounds")),
)


@given(answers)
def test_render_parse_score_round_trip(case):
    gold, mode = case
    text = f"<think>reasoning</think>\n{render_answer(gold)}"
    parsed = parse_final_answer(text, mode)
    assert score(parsed, gold, mode).correct


def test_aggregate_macro_average_and_columns():
    meta = {"a": "ATE", "b": "ATE", "c": "PN", "d": {"task": "PS"}}
    run = [GradeResult("a", "yes", True), GradeResult("b", "no", False, "wrong"),
           GradeResult("c", None, False, "parse"), GradeResult("d", (0, 1), True)]
    rep = aggregate(run, meta)
    row = rep.per_run[0]
    assert list(row) == list(COLUMNS)
    assert row["ATE"] == 0.5 and row["PN"] == 0.0 and row["PS"] == 1.0
    assert math.isnan(row["CDE"])
    assert row["Avg"] == pytest.approx(0.5)
    assert rep.failures == {"none": 2, "wrong": 1, "parse": 1}
    assert rep.to_dict()["per_run"][0]["CDE"] is None
    assert "ATE" in rep.format_table()


def test_aggregate_several_runs():
    meta = {"a": "ATE"}
    rep = aggregate([[GradeResult("a", "yes", True)], [GradeResult("a", "no", False, "wrong")]], meta)
    assert rep.mean["ATE"] == 0.5
    assert rep.total == 2
    assert "mean" in rep.format_table()


def test_aggregate_rejects_orphans():
    with pytest.raises(JoinError):
        aggregate([GradeResult("zz", "yes", True)], {"a": "ATE"})
