from itertools import combinations

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import brute_d_separated, dags
from scmgym import Dag, backdoor_sets, is_d_separated, mediators
from scmgym.exceptions import InvalidArgumentError, UnidentifiableError
from scmgym.identify import ancestors, descendants, is_valid_backdoor, joint_intervention_set, mediation_set


def directed_paths(dag, a, b):
    out = []

    def walk(path):
        if path[-1] == b:
            out.append(path)
            return
        for c in dag.children(path[-1]):
            walk(path + [c])

    walk([a])
    return out


def brute_backdoor_ok(dag, t, o, z):
    below = descendants(dag, t)
    if set(z) & below:
        return False
    return brute_d_separated(dag.without_outgoing([t]), t, o, set(z))


# ---------------------------------------------------------------------------
# worked graphs


def test_chain_fork_collider():
    chain = Dag(3, ((0, 1), (1, 2)))
    assert not is_d_separated(chain, {0}, {2})
    assert is_d_separated(chain, {0}, {2}, {1})
    fork = Dag(3, ((1, 0), (1, 2)))
    assert is_d_separated(fork, {0}, {2}, {1})
    collider = Dag(4, ((0, 1), (2, 1), (1, 3)))
    assert is_d_separated(collider, {0}, {2})
    assert not is_d_separated(collider, {0}, {2}, {1})
    assert not is_d_separated(collider, {0}, {2}, {3})


def test_confounder_backdoor_set():
    # 2 -> 0 -> 1, 2 -> 1
    dag = Dag(3, ((0, 1), (2, 0), (2, 1)))
    res = backdoor_sets(dag, 0, 1)
    assert res.backdoor_set == (2,)
    assert res.mediator_set == ()


def test_m_bias_prefers_empty_set():
    # 0 <- 2 -> 4 <- 3 -> 1, plus 0 -> 1: the collider 4 must stay unconditioned
    dag = Dag(5, ((0, 1), (2, 0), (2, 4), (3, 4), (3, 1)))
    assert backdoor_sets(dag, 0, 1).backdoor_set == ()
    assert not is_valid_backdoor(dag, 0, 1, {4})
    assert is_valid_backdoor(dag, 0, 1, {4, 2})


def test_lexicographic_tie_break():
    # {2}, {3} and {4} each block the single backdoor path 0 <- 2 <- 4 -> 3 -> 1
    dag = Dag(5, ((0, 1), (4, 2), (4, 3), (2, 0), (3, 1)))
    assert backdoor_sets(dag, 0, 1).backdoor_set == (2,)


def test_mediators_of_a_diamond():
    dag = Dag(5, ((0, 1), (1, 3), (0, 2), (2, 3), (4, 3)))
    assert mediators(dag, 0, 3) == {1, 2}
    assert backdoor_sets(dag, 0, 3).mediator_set == (1, 2)


def test_descendants_and_ancestors():
    dag = Dag(4, ((0, 1), (1, 2), (3, 2)))
    assert descendants(dag, 0) == {1, 2}
    assert ancestors(dag, 2) == {0, 1, 3}


def test_joint_intervention_set():
    # 3 confounds mediator 1 and outcome 2; intervening on 0 and 1 needs {3}
    dag = Dag(4, ((0, 1), (1, 2), (0, 2), (3, 1), (3, 2)))
    assert joint_intervention_set(dag, {0, 1}, 2) == (3,)
    with pytest.raises(InvalidArgumentError):
        joint_intervention_set(dag, {0, 2}, 2)


def test_mediation_set_blocks_mediator_outcome_confounding():
    dag = Dag(4, ((0, 1), (1, 2), (0, 2), (3, 1), (3, 2)))
    # 3 is a non-descendant of the treatment that confounds mediator and outcome
    assert mediation_set(dag, 0, 2) == (3,)


def test_argument_checks():
    dag = Dag(3, ((0, 1),))
    with pytest.raises(InvalidArgumentError):
        backdoor_sets(dag, 1, 1)
    with pytest.raises(InvalidArgumentError):
        is_d_separated(dag, {0}, {0})
    with pytest.raises(InvalidArgumentError):
        mediators(dag, 0, 7)


# ---------------------------------------------------------------------------
# properties against brute-force references


@st.composite
def dag_with_query(draw):
    dag = draw(dags(3, 7))
    n = dag.node_count
    a, b = draw(st.lists(st.integers(0, n - 1), min_size=2, max_size=2, unique=True))
    rest = [v for v in range(n) if v not in (a, b)]
    z = draw(st.lists(st.sampled_from(rest), unique=True)) if rest else []
    return dag, a, b, set(z)


@settings(max_examples=400, deadline=None)
@given(dag_with_query())
def test_d_separation_matches_path_enumeration(case):
    dag, a, b, z = case
    assert is_d_separated(dag, {a}, {b}, z) == brute_d_separated(dag, a, b, z)


@settings(max_examples=200, deadline=None)
@given(dag_with_query())
def test_d_separation_is_symmetric(case):
    dag, a, b, z = case
    assert is_d_separated(dag, {a}, {b}, z) == is_d_separated(dag, {b}, {a}, z)


@settings(max_examples=200, deadline=None)
@given(dags(2, 7), st.data())
def test_backdoor_set_is_valid_and_minimal(dag, data):
    t, o = data.draw(st.lists(st.integers(0, dag.node_count - 1), min_size=2, max_size=2, unique=True))
    pool = [v for v in range(dag.node_count) if v not in (t, o)]
    if not any(brute_backdoor_ok(dag, t, o, c) for k in range(len(pool) + 1) for c in combinations(pool, k)):
        with pytest.raises(UnidentifiableError):
            backdoor_sets(dag, t, o)
        return
    z = backdoor_sets(dag, t, o).backdoor_set
    assert brute_backdoor_ok(dag, t, o, z)
    smaller = [c for k in range(len(z)) for c in combinations(pool, k)]
    assert not any(brute_backdoor_ok(dag, t, o, c) for c in smaller)
    same = sorted(c for c in combinations(pool, len(z)) if brute_backdoor_ok(dag, t, o, c))
    assert z == same[0]


@settings(max_examples=200, deadline=None)
@given(dags(2, 7), st.data())
def test_mediators_match_directed_paths(dag, data):
    t, o = data.draw(st.lists(st.integers(0, dag.node_count - 1), min_size=2, max_size=2, unique=True))
    on_paths = {v for p in directed_paths(dag, t, o) for v in p[1:-1]}
    assert mediators(dag, t, o) == on_paths


def test_outcome_upstream_of_treatment_is_unidentifiable():
    with pytest.raises(UnidentifiableError):
        backdoor_sets(Dag(2, ((0, 1),)), 1, 0)


@settings(max_examples=150, deadline=None)
@given(dags(3, 7), st.data())
def test_mediation_set_satisfies_both_conditions(dag, data):
    pairs = [(t, o) for t in range(dag.node_count) for o in range(dag.node_count)
             if t != o and mediators(dag, t, o)]
    assume(pairs)
    t, o = data.draw(st.sampled_from(pairs))
    meds = mediators(dag, t, o)
    try:
        z = set(mediation_set(dag, t, o))
    except UnidentifiableError:
        return
    assert not z & descendants(dag, t)
    cut_t = dag.without_outgoing([t])
    for target in meds | {o}:
        assert brute_d_separated(cut_t, t, target, z)
    cut_all = dag.without_outgoing(meds | {t})
    for source in meds | {t}:
        assert brute_d_separated(cut_all, source, o, z)
