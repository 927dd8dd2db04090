import math

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import brute_joint, brute_prob, random_scm, scms
from scmgym import Dag, LabeledDag, SemanticsMode, Scm, exact_joint, instantiate_scm, query, sample
from scmgym.exceptions import CapacityError, InvalidArgumentError, SchemaError, UndefinedConditionalError
from scmgym.scm import JointDistribution, cpt, sigmoid


def _two_node(bias=(0.0, -1.0), weight=3.0):
    g = LabeledDag(Dag(2, ((0, 1),)), SemanticsMode.FAKE, ("aaaa", "bbbb"), (1 if weight > 0 else -1,))
    return Scm(g, bias, ((), (weight,)))


def test_logistic_mechanism_values():
    scm = _two_node()
    assert cpt(scm, 1, (1,)) == pytest.approx(0.880797, abs=1e-6)
    assert cpt(scm, 1, (0,)) == pytest.approx(0.268941, abs=1e-6)
    assert cpt(scm, 0, ()) == 0.5


def test_sigmoid_is_stable_at_extremes():
    out = sigmoid(np.array([-800.0, 0.0, 800.0]))
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(0.0) and out[2] == pytest.approx(1.0)


def test_weights_follow_polarity_and_ranges():
    for seed in range(50):
        scm = random_scm(seed)
        for v in range(scm.node_count):
            assert -2.0 <= scm.bias[v] <= 2.0
            for p, w in zip(scm.dag.parents(v), scm.weights[v]):
                assert 0.5 <= abs(w) <= 3.0
                assert math.copysign(1, w) == scm.graph.edge_polarity(p, v)


def test_scm_rejects_sign_mismatch():
    g = LabeledDag(Dag(2, ((0, 1),)), SemanticsMode.FAKE, ("aaaa", "bbbb"), (1,))
    with pytest.raises(InvalidArgumentError):
        Scm(g, (0.0, 0.0), ((), (-1.0,)))


def test_instantiate_rejects_bad_ranges():
    g = random_scm(1).graph
    with pytest.raises(InvalidArgumentError):
        instantiate_scm(g, (0.0, 1.0))
    with pytest.raises(InvalidArgumentError):
        instantiate_scm(g, (0.5, 3.0), bias_range=(1.0, -1.0))


def test_exact_joint_matches_chain_rule():
    for seed in range(40):
        scm = random_scm(seed, node_count=3 + seed % 5)
        joint = exact_joint(scm)
        ref = brute_joint(scm)
        for state, p in ref.items():
            index = sum(b << i for i, b in enumerate(state))
            assert joint.probabilities[index] == pytest.approx(p, abs=1e-12)


def test_truncated_factorisation_matches_chain_rule():
    scm = random_scm(7, node_count=6)
    for node in range(6):
        for value in (0, 1):
            joint = exact_joint(scm, do={node: value})
            ref = brute_joint(scm, {node: value})
            for target in range(6):
                assert query(joint, {target: 1}) == pytest.approx(brute_prob(ref, {target: 1}), abs=1e-12)


def test_query_conditioning():
    scm = random_scm(3, node_count=5)
    joint, ref = exact_joint(scm), brute_joint(scm)
    assert query(joint, {0: 1}, {1: 0, 2: 1}) == pytest.approx(brute_prob(ref, {0: 1}, {1: 0, 2: 1}), abs=1e-12)


def test_query_errors():
    scm = _two_node()
    joint = exact_joint(scm, do={0: 1})
    with pytest.raises(UndefinedConditionalError):
        query(joint, {1: 1}, {0: 0})
    with pytest.raises(InvalidArgumentError):
        query(joint, {1: 1}, {1: 1})
    with pytest.raises(InvalidArgumentError):
        query(joint, {5: 1})
    with pytest.raises(InvalidArgumentError):
        query(joint, {1: 2})


def test_capacity_limit():
    scm = random_scm(2, node_count=6)
    with pytest.raises(CapacityError):
        exact_joint(scm, max_nodes=5)


def test_sampling_frequencies_within_three_sigma():
    scm = random_scm(11, node_count=6)
    n = 200_000
    rows = sample(scm, n, seed=4)
    joint = exact_joint(scm)
    for v in range(6):
        p = query(joint, {v: 1})
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(rows[:, v].mean() - p) <= 3 * sigma + 1e-12


def test_sampling_is_reproducible_and_chunk_independent():
    scm = random_scm(5, node_count=5)
    a = sample(scm, 150_000, seed=9)
    b = sample(scm, 150_000, seed=9, jobs=3)
    assert np.array_equal(a, b)


def test_joint_from_samples():
    rows = np.array([[0, 0], [1, 0], [1, 1], [1, 1]])
    joint = JointDistribution.from_samples(rows)
    assert query(joint, {0: 1}) == 0.75
    assert query(joint, {1: 1}, {0: 1}) == pytest.approx(2 / 3)


def test_scm_round_trip_and_schema():
    scm = random_scm(8)
    data = scm.to_dict()
    assert Scm.from_dict(data) == scm
    with pytest.raises(SchemaError):
        Scm.from_dict({**data, "schema_version": "9.0"})


@settings(max_examples=60, deadline=None)
@given(scms(1, 6))
def test_joint_is_a_distribution(scm):
    p = exact_joint(scm).probabilities
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(scms(2, 6))
def test_intervened_node_is_a_point_mass(scm):
    v = scm.node_count - 1
    assert query(exact_joint(scm, do={v: 1}), {v: 1}) == pytest.approx(1.0)
