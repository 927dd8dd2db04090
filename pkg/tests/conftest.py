"""Shared fixtures, hypothesis strategies and brute-force reference oracles.

The reference oracles here deliberately avoid the package's inference code:
they loop over assignments in plain Python and evaluate the logistic
mechanism with ``math.exp``.
"""
from __future__ import annotations

import itertools
import math

import pytest
from hypothesis import strategies as st

from scmgym import Dag, assign_semantics, generate_dag, instantiate_scm

_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    _CRITERIA[number] = (ok, line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number][1])


# ---------------------------------------------------------------------------
# model builders


def random_scm(seed, node_count=None, density=0.4, max_nodes=10):
    """A Fake-mode SCM on a random DAG (node count drawn when not given)."""
    if node_count is None:
        node_count = 3 + seed % (max_nodes - 2)
    dag = generate_dag(node_count, density, seed, max_in_degree=4)
    graph = assign_semantics(dag, "Fake", seed=seed)
    return instantiate_scm(graph, seed=seed)


def scm_on(edges, node_count, seed=0):
    graph = assign_semantics(Dag(node_count, tuple(edges)), "Fake", seed=seed)
    return instantiate_scm(graph, seed=seed)


# ---------------------------------------------------------------------------
# reference oracles


def logistic(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z))


def p_one(scm, node, state) -> float:
    parents = scm.dag.parents(node)
    z = scm.bias[node] + sum(w * state[p] for p, w in zip(parents, scm.weights[node]))
    return logistic(z)


def brute_joint(scm, do=None):
    """Dict from assignment tuples to probability, by the chain rule."""
    do = dict(do or {})
    n = scm.node_count
    out = {}
    for state in itertools.product((0, 1), repeat=n):
        if any(state[k] != v for k, v in do.items()):
            out[state] = 0.0
            continue
        p = 1.0
        for v in range(n):
            if v in do:
                continue
            q = p_one(scm, v, state)
            p *= q if state[v] else 1.0 - q
        out[state] = p
    return out


def brute_prob(joint, event, given=None):
    given = given or {}
    num = den = 0.0
    for state, p in joint.items():
        if all(state[k] == v for k, v in given.items()):
            den += p
            if all(state[k] == v for k, v in event.items()):
                num += p
    return num / den


def brute_counterfactual(scm, worlds, event, given=()):
    """Counterfactual probability by integrating over a grid of noise cells.

    Each node's noise U is uniform on [0, 1] and the node is 1 iff
    U <= P(node = 1 | parents). Splitting [0, 1] at every attainable
    threshold makes every cell behave uniformly, so a representative point
    per cell plus its width gives the exact integral. ``worlds`` are
    do-dicts whose values may be ``("from", k)`` to copy world k's value.
    """
    n = scm.node_count
    cells = []
    for v in range(n):
        k = len(scm.dag.parents(v))
        cuts = sorted({0.0, 1.0} | {p_one(scm, v, _parent_state(scm, v, bits)) for bits in range(1 << k)})
        cells.append([((a + b) / 2, b - a) for a, b in zip(cuts, cuts[1:]) if b > a])
    order = _topo(scm.dag)
    num = den = 0.0
    for combo in itertools.product(*cells):
        weight = math.prod(w for _, w in combo)
        values = []
        for w in worlds:
            state = [0] * n
            for v in order:
                if v in w:
                    spec = w[v]
                    state[v] = values[spec[1]][v] if isinstance(spec, tuple) else spec
                else:
                    state[v] = int(combo[v][0] <= p_one(scm, v, state))
            values.append(state)
        if all(values[k][node] == val for k, node, val in given):
            den += weight
            if all(values[k][node] == val for k, node, val in event):
                num += weight
    return num / den


def _parent_state(scm, v, bits):
    state = [0] * scm.node_count
    for i, p in enumerate(scm.dag.parents(v)):
        state[p] = (bits >> i) & 1
    return state


def _topo(dag):
    order, placed = [], set()
    while len(order) < dag.node_count:
        for v in range(dag.node_count):
            if v not in placed and all(p in placed for p in dag.parents(v)):
                order.append(v)
                placed.add(v)
    return order


def skeleton_paths(dag, a, b):
    """All simple paths from a to b ignoring edge direction."""
    nbrs = {v: set(dag.parents(v)) | set(dag.children(v)) for v in range(dag.node_count)}
    out = []

    def walk(path):
        v = path[-1]
        if v == b:
            out.append(list(path))
            return
        for w in sorted(nbrs[v]):
            if w not in path:
                path.append(w)
                walk(path)
                path.pop()

    walk([a])
    return out


def path_blocked(dag, path, given) -> bool:
    edges = set(dag.edges)
    desc = {}

    def descendants_of(v):
        if v not in desc:
            seen, stack = set(), [v]
            while stack:
                for c in dag.children(stack.pop()):
                    if c not in seen:
                        seen.add(c)
                        stack.append(c)
            desc[v] = seen
        return desc[v]

    for prev, mid, nxt in zip(path, path[1:], path[2:]):
        collider = (prev, mid) in edges and (nxt, mid) in edges
        if collider:
            if mid not in given and not (descendants_of(mid) & set(given)):
                return True
        elif mid in given:
            return True
    return False


def brute_d_separated(dag, a, b, given) -> bool:
    return all(path_blocked(dag, p, given) for p in skeleton_paths(dag, a, b))


# ---------------------------------------------------------------------------
# strategies


@st.composite
def dags(draw, min_nodes=2, max_nodes=7):
    n = draw(st.integers(min_nodes, max_nodes))
    order = draw(st.permutations(range(n)))
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if draw(st.booleans()):
                edges.append((order[i], order[j]))
    return Dag(n, tuple(edges))


@st.composite
def scms(draw, min_nodes=2, max_nodes=6):
    dag = draw(dags(min_nodes, max_nodes))
    seed = draw(st.integers(0, 2**31 - 1))
    return instantiate_scm(assign_semantics(dag, "Fake", seed=seed), seed=seed)


@pytest.fixture(scope="session")
def small_config():
    from scmgym import GymConfig

    return GymConfig(per_task=3, stress_per_task=2)
