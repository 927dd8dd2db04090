import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_joint, brute_prob
from scmgym import EstimandSpec, GymConfig, LACK_CONDITION, QuestionInstance, Scm, Task, estimand, generate_instance
from scmgym.exceptions import GenerationError, SchemaError
from scmgym.expr import ProbRef
from scmgym.identify import backdoor_sets
from scmgym.questions import (
    COT_SUFFIX,
    LACK_CONDITION_HINT,
    compute_answer,
    evaluate_solution,
    narrate,
    render_statement,
    rounding_error_bound,
    unresolved_refs,
    value_to_answer,
)

CONFIG = GymConfig()
TASKS = [t.value for t in Task]


def _instances(task, count, start=0, **kw):
    return [generate_instance(CONFIG, (17, TASKS.index(task), i), task, **kw) for i in range(start, start + count)]


def _scm(inst):
    return Scm.from_dict(inst.metadata["scm"])


def _spec(inst):
    return EstimandSpec.from_dict(inst.metadata["spec"])


def test_statement_rendering():
    labels = ["rain", "wet"]
    assert render_statement(ProbRef.of({1: 1}, {0: 0}), 0.25, labels, 4) == \
        "For those with rain being 0, the probability of wet being 1 is 0.2500."
    assert render_statement(ProbRef.of({0: 1}), 0.5, labels, 2) == "The probability of rain being 1 is 0.50."


def test_value_to_answer():
    assert value_to_answer(0.03, "binary") == "yes"
    assert value_to_answer(0.0, "binary") == "no"
    assert value_to_answer(-0.123456, "numeric") == -0.1235
    assert value_to_answer((0.11111, 0.99999), "bounds") == (0.1111, 1.0)


@pytest.mark.parametrize("task", TASKS)
def test_instances_are_self_consistent(task):
    for inst in _instances(task, 15):
        assert compute_answer(inst.solution, inst.given_info, inst.answer_mode, inst.precision) == inst.answer
        assert inst.answer != LACK_CONDITION
        assert len(inst.given_info) <= CONFIG.max_probability_count
        assert inst.solution.expr.depth() <= CONFIG.max_expression_depth


@pytest.mark.parametrize("task", TASKS)
def test_statement_values_come_from_the_scm(task):
    for inst in _instances(task, 5):
        scm = _scm(inst)
        joint = brute_joint(scm)
        for s in inst.given_info:
            ref = brute_prob(joint, dict(s.ref.targets), dict(s.ref.conditions))
            assert s.value == round(ref, 4)


@pytest.mark.parametrize("task", TASKS)
def test_symbolic_value_matches_oracle(task):
    for inst in _instances(task, 8):
        truth = estimand(_scm(inst), _spec(inst)).value
        assert inst.metadata["oracle_value"] == pytest.approx(truth, abs=1e-9)
        got = evaluate_solution(inst.solution, inst.given_info)
        bound = rounding_error_bound(inst.solution, inst.given_info, inst.precision)
        if isinstance(truth, tuple):
            assert max(abs(a - b) for a, b in zip(got, truth)) <= bound * 1.05 + 1e-9
        else:
            assert abs(got - truth) <= bound * 1.05 + 1e-9


@pytest.mark.parametrize("task", ["ATE", "CDE", "ETT", "NDE", "NIE"])
def test_binary_answers_respect_the_sign_margin(task):
    for inst in _instances(task, 10):
        value = inst.metadata["oracle_value"]
        assert abs(value) >= CONFIG.sign_margin
        assert inst.answer == ("yes" if value > 0 else "no")


def test_query_follows_the_template():
    inst = _instances("ATE", 1)[0]
    spec, labels = _spec(inst), inst.labels
    assert inst.query == (f"If {labels[spec.treatment]} is changed to be {spec.treatment_value}, will the "
                          f"{labels[spec.outcome]} be more likely to be {spec.outcome_value}?")
    pn = _instances("PN", 1)[0]
    assert re.fullmatch(r"Given that .+ was [01] and .+ was [01], what is the lower bound and upper bound of the "
                        r"probability that .+ would have been [01] if the .+ had been [01]\?", pn.query)


def test_prompt_shape():
    inst = _instances("ETT", 1)[0]
    prompt = inst.prompt()
    assert prompt.endswith(COT_SUFFIX)
    assert LACK_CONDITION_HINT not in prompt
    assert not inst.prompt(cot=False).endswith(COT_SUFFIX)
    assert prompt.startswith(inst.context)


def test_mediator_tasks_name_a_mediator():
    for task in ("CDE", "NDE", "NIE"):
        for inst in _instances(task, 4):
            spec = _spec(inst)
            meds = set(inst.metadata["mediator_set"])
            assert meds
            if task == "CDE":
                assert {m for m, _ in spec.mediator_assignment} <= meds


def test_bounds_answers_are_ordered():
    for task in ("PN", "PS"):
        for inst in _instances(task, 10):
            lo, hi = inst.answer
            assert 0.0 <= lo <= hi <= 1.0
            assert inst.answer_mode == "bounds"


def test_generation_is_deterministic():
    a = generate_instance(CONFIG, (3, 4), "NIE")
    b = generate_instance(CONFIG, (3, 4), "NIE")
    assert a == b and a.to_dict() == b.to_dict()
    assert generate_instance(CONFIG, (3, 5), "NIE") != a


def test_modes_are_all_used():
    modes = {inst.mode.value for inst in _instances("ATE", 30)}
    assert modes == {"Real", "Random", "Fake"}


def test_mode_mix_is_respected():
    cfg = CONFIG.replace(mode_mix={"Fake": 1.0})
    assert {generate_instance(cfg, (i,), "ATE").mode.value for i in range(10)} == {"Fake"}


def test_numeric_answer_mode():
    cfg = CONFIG.replace(answer_mode="numeric")
    inst = generate_instance(cfg, (1,), "ATE")
    assert isinstance(inst.answer, float)
    assert inst.answer == round(evaluate_solution(inst.solution, inst.given_info), 4)


def test_deconfounding_instances():
    for i in range(3):
        inst = generate_instance(CONFIG, (5, i), "ATE", deconfounding=True)
        spec = _spec(inst)
        assert backdoor_sets(_scm(inst).dag, spec.treatment, spec.outcome).backdoor_set
        assert inst.metadata["variant"] == "deconfounding"
        assert inst.metadata["naive_value"] is not None


def test_retry_cap_exhaustion_is_reported():
    cfg = CONFIG.replace(max_nodes=3, min_nodes=3, edge_density=0.0, retry_cap=5, mode_mix={"Fake": 1.0})
    with pytest.raises(GenerationError):
        generate_instance(cfg, 0, "NDE")


def test_missing_statement_gives_lack_condition():
    inst = _instances("ATE", 1)[0]
    partial = inst.given_info[1:]
    assert unresolved_refs(inst.solution, partial) == {inst.given_info[0].ref}
    assert compute_answer(inst.solution, partial, inst.answer_mode) == LACK_CONDITION


def test_round_trip_and_schema():
    inst = _instances("NDE", 1)[0]
    data = inst.to_dict()
    back = QuestionInstance.from_dict(data)
    assert back == inst and back.to_dict() == data
    with pytest.raises(SchemaError):
        QuestionInstance.from_dict({**data, "schema_version": "2.0"})


def test_narration_ends_with_the_gold_answer():
    for task in TASKS:
        inst = _instances(task, 1)[0]
        text = narrate(inst)
        assert text.splitlines()[-1].startswith("Final answer: ")
        for s in inst.given_info:
            assert f"{s.value:.4f}" in text


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(TASKS), st.integers(0, 10**6))
def test_any_seed_yields_a_consistent_instance(task, seed):
    inst = generate_instance(CONFIG, (seed,), task)
    assert compute_answer(inst.solution, inst.given_info, inst.answer_mode, inst.precision) == inst.answer
    assert 1 <= len(inst.given_info) <= 12
    assert len(inst.labels) <= 10
