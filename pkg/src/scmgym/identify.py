"""Graphical identification: d-separation, adjustment sets, mediators."""
from __future__ import annotations

from collections.abc import Callable, Iterable
from dataclasses import dataclass
from itertools import combinations

from ._validation import check_disjoint, check_node, check_node_set
from .exceptions import InvalidArgumentError, UnidentifiableError
from .graph import Dag


@dataclass(frozen=True)
class AdjustmentResult:
    backdoor_set: tuple[int, ...]
    minimal: bool
    mediator_set: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"backdoor_set": list(self.backdoor_set), "minimal": self.minimal, "mediator_set": list(self.mediator_set)}


def descendants(dag: Dag, node: int) -> frozenset[int]:
    """Nodes reachable from ``node`` along directed edges (excluding itself)."""
    node = check_node(node, dag.node_count)
    return _reach(dag.child_lists, [node])


def ancestors(dag: Dag, node: int) -> frozenset[int]:
    node = check_node(node, dag.node_count)
    return _reach(dag.parent_lists, [node])


def _reach(adjacency, start: Iterable[int]) -> frozenset[int]:
    seen: set[int] = set()
    stack = list(start)
    while stack:
        v = stack.pop()
        for w in adjacency[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return frozenset(seen)


def is_d_separated(dag: Dag, set_a, set_b, given=()) -> bool:
    """True iff every path between ``set_a`` and ``set_b`` is blocked by ``given``.

    Reachability over (node, direction) pairs: a trail may pass a
    non-collider only if it is unobserved, and a collider only if it or one
    of its descendants is observed.
    """
    a = check_node_set(set_a, dag.node_count, "set_a")
    b = check_node_set(set_b, dag.node_count, "set_b")
    z = check_node_set(given, dag.node_count, "given")
    check_disjoint(set_a=a, set_b=b, given=z)
    if not a or not b:
        return True
    return not (_reachable(dag, a, z) & b)


def _reachable(dag: Dag, start: frozenset[int], observed: frozenset[int]) -> set[int]:
    parents, children = dag.parent_lists, dag.child_lists
    # observed nodes and their ancestors: colliders there are open
    opened = set(observed) | _reach(parents, observed)
    up, down = 0, 1
    visited: set[tuple[int, int]] = set()
    stack = [(s, up) for s in start]
    found: set[int] = set()
    while stack:
        v, d = stack.pop()
        if (v, d) in visited:
            continue
        visited.add((v, d))
        if v not in observed:
            found.add(v)
        if d == up and v not in observed:
            stack.extend((p, up) for p in parents[v])
            stack.extend((c, down) for c in children[v])
        elif d == down:
            if v not in observed:
                stack.extend((c, down) for c in children[v])
            if v in opened:
                stack.extend((p, up) for p in parents[v])
    return found


def mediators(dag: Dag, treatment: int, outcome: int) -> frozenset[int]:
    """Nodes on at least one directed treatment -> outcome path, endpoints excluded."""
    _check_pair(dag, treatment, outcome)
    return descendants(dag, treatment) & ancestors(dag, outcome)


def _check_pair(dag: Dag, treatment: int, outcome: int) -> None:
    check_node(treatment, dag.node_count, "treatment")
    check_node(outcome, dag.node_count, "outcome")
    if treatment == outcome:
        raise InvalidArgumentError("treatment and outcome must differ")


def smallest_valid_set(candidates: Iterable[int], is_valid: Callable[[tuple[int, ...]], bool], max_size: int | None = None):
    """First valid subset by (cardinality, lexicographic node tuple), or None."""
    pool = sorted(set(candidates))
    top = len(pool) if max_size is None else min(max_size, len(pool))
    for size in range(top + 1):
        for subset in combinations(pool, size):
            if is_valid(subset):
                return subset
    return None


def is_valid_backdoor(dag: Dag, treatment: int, outcome: int, subset) -> bool:
    subset = set(subset)
    if subset & descendants(dag, treatment) or treatment in subset or outcome in subset:
        return False
    return is_d_separated(dag.without_outgoing([treatment]), {treatment}, {outcome}, subset)


def backdoor_sets(dag: Dag, treatment: int, outcome: int) -> AdjustmentResult:
    """Minimal backdoor adjustment set plus the mediator set for (treatment, outcome).

    Candidates are non-descendants of the treatment, searched by increasing
    size with lexicographic tie-breaking, so the choice is reproducible.
    """
    _check_pair(dag, treatment, outcome)
    pruned = dag.without_outgoing([treatment])
    pool = set(range(dag.node_count)) - descendants(dag, treatment) - {treatment, outcome}
    found = smallest_valid_set(pool, lambda z: is_d_separated(pruned, {treatment}, {outcome}, z))
    if found is None:
        raise UnidentifiableError(f"no backdoor set exists for {treatment} -> {outcome}")
    return AdjustmentResult(found, True, tuple(sorted(mediators(dag, treatment, outcome))))


def joint_intervention_set(dag: Dag, treatments: Iterable[int], outcome: int) -> tuple[int, ...]:
    """Minimal Z licensing sum_z P(y | t, z) P(z) for a joint intervention on ``treatments``.

    Z may contain no descendant of any treatment and must separate the
    treatments from the outcome once all treatment out-edges are cut.
    """
    ts = check_node_set(treatments, dag.node_count, "treatments")
    check_node(outcome, dag.node_count, "outcome")
    if outcome in ts:
        raise InvalidArgumentError("outcome cannot be intervened on")
    pruned = dag.without_outgoing(ts)
    below = set().union(*(descendants(dag, t) for t in ts))
    pool = set(range(dag.node_count)) - below - ts - {outcome}
    found = smallest_valid_set(pool, lambda z: is_d_separated(pruned, ts, {outcome}, z))
    if found is None:
        raise UnidentifiableError("no adjustment set exists for the joint intervention")
    return found


def mediation_set(dag: Dag, treatment: int, outcome: int, mediator_set: Iterable[int] | None = None) -> tuple[int, ...]:
    """Minimal covariate set Z for the mediation formula.

    Z holds non-descendants of the treatment and must (a) block back-door
    paths from the treatment to the mediators and the outcome, and (b) block
    back-door paths from the treatment-and-mediator block to the outcome.
    """
    _check_pair(dag, treatment, outcome)
    ms = frozenset(mediators(dag, treatment, outcome) if mediator_set is None else mediator_set)
    cut_t = dag.without_outgoing([treatment])
    cut_all = dag.without_outgoing(ms | {treatment})
    pool = set(range(dag.node_count)) - descendants(dag, treatment) - {treatment, outcome}

    def ok(z):
        return (
            is_d_separated(cut_t, {treatment}, ms | {outcome}, z)
            and is_d_separated(cut_all, ms | {treatment}, {outcome}, z)
        )

    found = smallest_valid_set(pool, ok)
    if found is None:
        raise UnidentifiableError("no covariate set satisfies the mediation conditions")
    return found
