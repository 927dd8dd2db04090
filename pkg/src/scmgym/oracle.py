"""Exact interventional and counterfactual computation on binary SCMs.

Every node is a threshold function of an independent uniform ``U``: the node
is 1 iff ``U <= cpt(parents)``. Counterfactual worlds share ``U`` and differ
only by interventions, so a node's values across all worlds are determined
by which interval between the distinct cpt values ``U`` falls into.
"""
from __future__ import annotations

import enum
import itertools
import math
from collections import defaultdict
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_binary, check_node, check_random_state
from .exceptions import CapacityError, InvalidArgumentError, NotApplicableError, UndefinedConditionalError
from .graph import topological_order
from .identify import ancestors, descendants, mediators
from .scm import JointDistribution, Scm, exact_joint, query

DEFAULT_BUDGET = 10**7
DEFAULT_MC_DRAWS = 200_000


class Task(str, enum.Enum):
    ATE = "ATE"
    CDE = "CDE"
    ETT = "ETT"
    NDE = "NDE"
    NIE = "NIE"
    PN = "PN"
    PS = "PS"

    @property
    def needs_mediators(self) -> bool:
        return self in (Task.CDE, Task.NDE, Task.NIE)

    @property
    def is_bounds(self) -> bool:
        return self in (Task.PN, Task.PS)


ALL_TASKS = tuple(Task)


@dataclass(frozen=True)
class FromWorld:
    """Intervention value copied from the node's value in another world."""

    world: int


@dataclass(frozen=True)
class ResponseProfile:
    """Canonical discretisation of one node's exogenous noise.

    ``thresholds`` are the sorted distinct cpt values; interval ``j`` covers
    ``U`` in ``(t_{j-1}, t_j]`` (with ``t_0 = 0`` and a final interval up to 1)
    and ``responses[j][pa]`` is the node's value for parent configuration
    ``pa`` whenever ``U`` lies in that interval.
    """

    thresholds: tuple[float, ...]
    probabilities: tuple[float, ...]
    responses: tuple[tuple[int, ...], ...]


def response_profile(scm: Scm, node: int) -> ResponseProfile:
    table = scm.cpt_table(node)
    thresholds = tuple(sorted(set(float(t) for t in table)))
    cuts = (0.0, *thresholds, 1.0)
    probs = tuple(max(0.0, cuts[j + 1] - cuts[j]) for j in range(len(cuts) - 1))
    responses = tuple(tuple(int(g >= t) for g in table) for t in thresholds) + (tuple(0 for _ in table),)
    return ResponseProfile(thresholds, probs, responses)


@dataclass(frozen=True)
class CounterfactualEstimate:
    value: float
    stderr: float = 0.0
    method: str = "exact"


# --------------------------------------------------------------------------
# interventions


def interventional(scm: Scm, do_assignment: Mapping[int, int]) -> JointDistribution:
    """Truncated factorisation: intervened factors become point masses."""
    return exact_joint(scm, do=do_assignment)


# --------------------------------------------------------------------------
# counterfactuals


class _BudgetExceeded(Exception):
    pass


def _normalise_worlds(scm: Scm, worlds) -> list[dict[int, int | FromWorld]]:
    out = []
    for k, w in enumerate(worlds):
        d = {}
        for node, val in dict(w).items():
            node = check_node(node, scm.node_count, "intervened node")
            if isinstance(val, FromWorld):
                if not 0 <= val.world < len(worlds) or val.world == k:
                    raise InvalidArgumentError(f"world {k}: bad world reference {val.world}")
            else:
                val = check_binary(val, "intervention value")
            d[node] = val
        out.append(d)
    return out


def _normalise_terms(scm: Scm, terms, n_worlds: int) -> tuple[tuple[int, int, int], ...]:
    out = []
    for world, node, value in terms:
        if not 0 <= world < n_worlds:
            raise InvalidArgumentError(f"term refers to missing world {world}")
        out.append((int(world), check_node(node, scm.node_count), check_binary(value)))
    return tuple(out)


def counterfactual(scm: Scm, worlds, event, given=(), **kwargs) -> float:
    """P(event | given) across jointly-evaluated counterfactual worlds.

    ``worlds`` is a list of do-assignments (an empty mapping is the factual
    world); values may be :class:`FromWorld` references for nested
    counterfactuals. ``event`` and ``given`` are conjunctions of
    ``(world_index, node, value)`` terms.
    """
    return counterfactual_estimate(scm, worlds, event, given, **kwargs).value


def counterfactual_estimate(
    scm: Scm,
    worlds,
    event,
    given=(),
    *,
    method: str = "auto",
    budget: int = DEFAULT_BUDGET,
    draws: int = DEFAULT_MC_DRAWS,
    seed=0,
) -> CounterfactualEstimate:
    ws = _normalise_worlds(scm, worlds)
    ev = _normalise_terms(scm, event, len(ws))
    gv = _normalise_terms(scm, given, len(ws))
    if method in ("auto", "exact"):
        try:
            return CounterfactualEstimate(_propagate_exact(scm, ws, ev, gv, budget), 0.0, "exact")
        except _BudgetExceeded:
            if method == "exact":
                raise CapacityError("counterfactual state space exceeds the exact budget") from None
        return _monte_carlo(scm, ws, ev, gv, draws, seed)
    if method == "enumerate":
        return CounterfactualEstimate(_enumerate(scm, ws, ev, gv, budget), 0.0, "enumerate")
    if method == "mc":
        return _monte_carlo(scm, ws, ev, gv, draws, seed)
    raise InvalidArgumentError(f"unknown counterfactual method {method!r}")


def _relevant_order(scm: Scm, nodes) -> list[int]:
    keep = set(nodes)
    for v in nodes:
        keep |= ancestors(scm.dag, v)
    return [v for v in topological_order(scm.dag) if v in keep]


def _world_plan(ws, v):
    fixed_bits = 0
    fixed = set()
    refs = []
    for k, w in enumerate(ws):
        if v in w:
            val = w[v]
            if isinstance(val, FromWorld):
                refs.append((k, val.world))
            else:
                fixed.add(k)
                fixed_bits |= val << k
    free = [k for k in range(len(ws)) if k not in fixed and all(k != r for r, _ in refs)]
    return free, fixed_bits, refs


def _resolve_refs(col: int, refs) -> int:
    # a reference may point at another referencing world; iterate to a fixed point
    for _ in range(len(refs) + 1):
        changed = False
        for k, j in refs:
            bit = (col >> j) & 1
            if ((col >> k) & 1) != bit:
                col ^= 1 << k
                changed = True
        if not changed:
            break
    return col


def _ratio(joint_mass: float, evidence_mass: float) -> float:
    if evidence_mass <= 0.0:
        raise UndefinedConditionalError("the conditioning event has probability zero")
    return min(1.0, max(0.0, joint_mass / evidence_mass))


def _propagate_exact(scm: Scm, ws, event, given, budget: int) -> float:
    """Twin-world propagation in topological order.

    The state is the column of values (one bit per world) of every node that
    is still needed downstream; each node splits a state into at most
    ``worlds + 1`` response intervals. Evidence prunes branches on the spot.
    """
    n_worlds = len(ws)
    event_nodes = {v for _, v, _ in event}
    order = _relevant_order(scm, event_nodes | {v for _, v, _ in given})
    last_use = {}
    for i, v in enumerate(order):
        for p in scm.dag.parents(v):
            last_use[p] = i
    evidence_by_node = defaultdict(list)
    for k, v, val in given:
        evidence_by_node[v].append((k, val))

    live: list[int] = []
    states: dict[tuple[int, ...], float] = {(): 1.0}
    all_ones = (1 << n_worlds) - 1
    for i, v in enumerate(order):
        parent_pos = [live.index(p) for p in scm.dag.parents(v)]
        table = scm.cpt_table(v)
        free, fixed_bits, refs = _world_plan(ws, v)
        checks = evidence_by_node.get(v, ())
        new_live = live + [v]
        keep_idx = [j for j, u in enumerate(new_live) if u in event_nodes or last_use.get(u, -1) > i]
        out: dict[tuple[int, ...], float] = defaultdict(float)
        for key, mass in states.items():
            gs = []
            for k in free:
                idx = 0
                for j, pp in enumerate(parent_pos):
                    idx |= ((key[pp] >> k) & 1) << j
                gs.append(table[idx])
            prev = 0.0
            branches = []
            for t in sorted(set(gs)):
                col = fixed_bits
                for k, g in zip(free, gs):
                    if g >= t:
                        col |= 1 << k
                branches.append((col, t - prev))
                prev = t
            branches.append((fixed_bits, 1.0 - prev))
            for col, width in branches:
                if width <= 0.0:
                    continue
                if refs:
                    col = _resolve_refs(col, refs) & all_ones
                if any(((col >> k) & 1) != val for k, val in checks):
                    continue
                full = key + (col,)
                out[tuple(full[j] for j in keep_idx)] += mass * width
        states = out
        live = [new_live[j] for j in keep_idx]
        if len(states) > budget:
            raise _BudgetExceeded
    pos = {v: j for j, v in enumerate(live)}
    evidence_mass = sum(states.values())
    hit = sum(m for key, m in states.items() if all(((key[pos[v]] >> k) & 1) == val for k, v, val in event))
    return _ratio(hit, evidence_mass)


def _evaluate_worlds(scm: Scm, ws, order, choice) -> list[dict[int, int]]:
    values = [dict() for _ in ws]
    for v in order:
        profile_resp = choice[v]
        pending = []
        for k, w in enumerate(ws):
            if v in w:
                if isinstance(w[v], FromWorld):
                    pending.append((k, w[v].world))
                else:
                    values[k][v] = w[v]
                continue
            idx = 0
            for j, p in enumerate(scm.dag.parents(v)):
                idx |= values[k][p] << j
            values[k][v] = profile_resp[idx]
        for _ in range(len(pending) + 1):
            for k, j in pending:
                if v in values[j]:
                    values[k][v] = values[j][v]
    return values


def _enumerate(scm: Scm, ws, event, given, budget: int) -> float:
    """Brute force over the product of per-node response intervals."""
    order = _relevant_order(scm, {v for _, v, _ in event} | {v for _, v, _ in given})
    profiles = {v: response_profile(scm, v) for v in order}
    size = math.prod(len(profiles[v].probabilities) for v in order)
    if size > budget:
        raise CapacityError(f"{size} response-type combinations exceed the budget of {budget}")
    joint_mass = evidence_mass = 0.0
    for combo in itertools.product(*(range(len(profiles[v].probabilities)) for v in order)):
        weight = 1.0
        for v, j in zip(order, combo):
            weight *= profiles[v].probabilities[j]
        if weight == 0.0:
            continue
        choice = {v: profiles[v].responses[j] for v, j in zip(order, combo)}
        values = _evaluate_worlds(scm, ws, order, choice)
        if all(values[k][v] == val for k, v, val in given):
            evidence_mass += weight
            if all(values[k][v] == val for k, v, val in event):
                joint_mass += weight
    return _ratio(joint_mass, evidence_mass)


def _monte_carlo(scm: Scm, ws, event, given, draws: int, seed) -> CounterfactualEstimate:
    """Stratified (Latin hypercube) draws of the exogenous noise."""
    rng = check_random_state(seed)
    order = _relevant_order(scm, {v for _, v, _ in event} | {v for _, v, _ in given})
    u = {v: (rng.permutation(draws) + rng.random(draws)) / draws for v in order}
    values = [dict() for _ in ws]
    for v in order:
        pending = []
        for k, w in enumerate(ws):
            if v in w:
                if isinstance(w[v], FromWorld):
                    pending.append((k, w[v].world))
                else:
                    values[k][v] = np.full(draws, w[v], dtype=np.int64)
                continue
            idx = np.zeros(draws, dtype=np.int64)
            for j, p in enumerate(scm.dag.parents(v)):
                idx |= values[k][p] << j
            values[k][v] = (u[v] <= scm.cpt_table(v)[idx]).astype(np.int64)
        for _ in range(len(pending) + 1):
            for k, j in pending:
                if v in values[j]:
                    values[k][v] = values[j][v]
    ev_mask = np.ones(draws, dtype=bool)
    for k, v, val in given:
        ev_mask &= values[k][v] == val
    hit = ev_mask.copy()
    for k, v, val in event:
        hit &= values[k][v] == val
    n_ev = int(ev_mask.sum())
    if n_ev == 0:
        raise UndefinedConditionalError("no Monte Carlo draw satisfied the conditioning event")
    p = hit.sum() / n_ev
    return CounterfactualEstimate(float(p), float(math.sqrt(max(p * (1 - p), 1.0 / n_ev) / n_ev)), "mc")


# --------------------------------------------------------------------------
# estimands


@dataclass(frozen=True)
class EstimandSpec:
    """One causal question.

    ``treatment_value`` is the value named in the question template (the
    hypothetical value for ATE/CDE/NDE/NIE, the observed value for ETT, the
    positive value for PN/PS); ``contrast_value`` is its complement.
    """

    task: Task
    treatment: int
    treatment_value: int
    outcome: int
    outcome_value: int
    mediator_assignment: tuple[tuple[int, int], ...] = ()
    mediator_set: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if self.treatment == self.outcome:
            raise InvalidArgumentError("treatment and outcome must differ")
        check_binary(self.treatment_value, "treatment_value")
        check_binary(self.outcome_value, "outcome_value")
        object.__setattr__(self, "mediator_assignment", tuple(sorted((int(a), int(b)) for a, b in self.mediator_assignment)))
        object.__setattr__(self, "mediator_set", tuple(sorted(int(m) for m in self.mediator_set)))

    @property
    def contrast_value(self) -> int:
        return 1 - self.treatment_value

    def to_dict(self) -> dict:
        return {
            "task": self.task.value,
            "treatment": self.treatment,
            "treatment_value": self.treatment_value,
            "outcome": self.outcome,
            "outcome_value": self.outcome_value,
            "mediator_assignment": [list(p) for p in self.mediator_assignment],
            "mediator_set": list(self.mediator_set),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EstimandSpec":
        return cls(
            Task(data["task"]),
            int(data["treatment"]),
            int(data["treatment_value"]),
            int(data["outcome"]),
            int(data["outcome_value"]),
            tuple(tuple(p) for p in data.get("mediator_assignment", ())),
            tuple(data.get("mediator_set", ())),
        )


@dataclass(frozen=True)
class EstimandValue:
    kind: str  # "scalar" or "bound_pair"
    value: float | tuple[float, float]
    exact: float | None = field(default=None, compare=False)  # PN/PS point value, audit only

    def __post_init__(self):
        if self.kind == "bound_pair":
            lo, hi = self.value
            if lo > hi:
                raise InvalidArgumentError(f"bound pair with lower {lo} > upper {hi}")
        elif self.kind != "scalar":
            raise InvalidArgumentError(f"unknown estimand kind {self.kind!r}")


def check_spec(scm: Scm, spec: EstimandSpec) -> None:
    n = scm.node_count
    check_node(spec.treatment, n, "treatment")
    check_node(spec.outcome, n, "outcome")
    if spec.task.needs_mediators:
        meds = mediators(scm.dag, spec.treatment, spec.outcome)
        if not meds:
            raise NotApplicableError(f"{spec.task.value} needs at least one mediator")
        if spec.task is Task.CDE:
            keys = {m for m, _ in spec.mediator_assignment}
            if not keys or not keys <= meds:
                raise InvalidArgumentError("CDE mediator assignment must name mediators of the pair")
        elif not spec.mediator_set or not set(spec.mediator_set) <= meds:
            raise InvalidArgumentError(f"{spec.task.value} mediator_set must be a nonempty set of mediators")


def pn_ps_bounds(
    observational: JointDistribution,
    interventional_x: JointDistribution,
    interventional_x_prime: JointDistribution,
    spec: EstimandSpec,
) -> EstimandValue:
    """Tian-Pearl bounds from observational and both experimental laws.

    ``interventional_x`` is the law under do(treatment = treatment_value),
    ``interventional_x_prime`` under the contrast value.
    """
    t, o = spec.treatment, spec.outcome
    x, xp = spec.treatment_value, spec.contrast_value
    y, yp = spec.outcome_value, 1 - spec.outcome_value
    p_y = query(observational, {o: y})
    p_xy = query(observational, {t: x, o: y})
    p_xpyp = query(observational, {t: xp, o: yp})
    y_do_x = query(interventional_x, {o: y})
    y_do_xp = query(interventional_x_prime, {o: y})
    if spec.task is Task.PN:
        if p_xy <= 0.0:
            raise UndefinedConditionalError("P(x, y) is zero; PN is undefined")
        lower = max(0.0, (p_y - y_do_xp) / p_xy)
        upper = min(1.0, ((1.0 - y_do_xp) - p_xpyp) / p_xy)
    elif spec.task is Task.PS:
        if p_xpyp <= 0.0:
            raise UndefinedConditionalError("P(x', y') is zero; PS is undefined")
        lower = max(0.0, (y_do_x - p_y) / p_xpyp)
        upper = min(1.0, (y_do_x - p_xy) / p_xpyp)
    else:
        raise InvalidArgumentError(f"bounds are defined for PN/PS, not {spec.task.value}")
    return EstimandValue("bound_pair", (lower, upper))


def estimand(scm: Scm, spec: EstimandSpec, **cf_options) -> EstimandValue:
    """Ground-truth value of ``spec`` computed from the SCM itself."""
    check_spec(scm, spec)
    t, o = spec.treatment, spec.outcome
    x, xp, y = spec.treatment_value, spec.contrast_value, spec.outcome_value

    def p_do(do):
        return query(interventional(scm, do), {o: y})

    task = spec.task
    if task is Task.ATE:
        return EstimandValue("scalar", p_do({t: x}) - p_do({t: xp}))
    if task is Task.CDE:
        m = dict(spec.mediator_assignment)
        return EstimandValue("scalar", p_do({t: x, **m}) - p_do({t: xp, **m}))
    if task is Task.ETT:
        # among units observed at x: hypothetical x' against actual x
        worlds = [{}, {t: xp}, {t: x}]
        hyp = counterfactual(scm, worlds, [(1, o, y)], [(0, t, x)], **cf_options)
        act = counterfactual(scm, worlds, [(2, o, y)], [(0, t, x)], **cf_options)
        return EstimandValue("scalar", hyp - act)
    if task in (Task.NDE, Task.NIE):
        meds = spec.mediator_set
        if task is Task.NDE:
            # treatment switched to x, mediators at their natural value under x'
            worlds = [{t: xp}, {t: x, **{m: FromWorld(0) for m in meds}}]
        else:
            # treatment held at x', mediators at their natural value under x
            worlds = [{t: x}, {t: xp, **{m: FromWorld(0) for m in meds}}]
        nested = counterfactual(scm, worlds, [(1, o, y)], **cf_options)
        return EstimandValue("scalar", nested - p_do({t: xp}))
    obs = exact_joint(scm)
    bounds = pn_ps_bounds(obs, interventional(scm, {t: x}), interventional(scm, {t: xp}), spec)
    if task is Task.PN:
        point = counterfactual(scm, [{}, {t: xp}], [(1, o, 1 - y)], [(0, t, x), (0, o, y)], **cf_options)
    else:
        point = counterfactual(scm, [{}, {t: x}], [(1, o, y)], [(0, t, xp), (0, o, 1 - y)], **cf_options)
    return EstimandValue("bound_pair", bounds.value, point)


def is_genuine_effect(scm: Scm, spec: EstimandSpec) -> bool:
    return spec.outcome in descendants(scm.dag, spec.treatment)
