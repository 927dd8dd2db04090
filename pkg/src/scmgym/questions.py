"""Question instances: symbolic solutions, given probabilities, rendering, gold answers."""
from __future__ import annotations

import dataclasses
import itertools
from functools import lru_cache
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import GymConfig
from .exceptions import (
    GenerationError,
    InvalidArgumentError,
    MissingReferenceError,
    NotApplicableError,
    RegenerateInstance,
    SchemaError,
    SemanticsError,
    UndefinedConditionalError,
    UnidentifiableError,
)
from .expr import Bounds, Const, Expr, Max, Min, ProbRef, Ref, SolutionExpr, Step, total
from .graph import LabeledDag, SemanticsMode, Vocabulary, assign_semantics, generate_dag, load_vocabulary, sample_real_graph
from .identify import AdjustmentResult, backdoor_sets, descendants, joint_intervention_set, mediation_set, mediators
from .oracle import EstimandSpec, Task, estimand
from .scm import JointDistribution, Scm, exact_joint, instantiate_scm, sample

SCHEMA_VERSION = "1.0"
LACK_CONDITION = "LACK_CONDITION"
FULL_PRECISION_TOLERANCE = 1e-9

TASK_NAMES = {
    Task.ATE: "average treatment effect",
    Task.CDE: "controlled direct effect",
    Task.ETT: "effect of the treatment on the treated",
    Task.NDE: "natural direct effect",
    Task.NIE: "natural indirect effect",
    Task.PN: "probability of necessity",
    Task.PS: "probability of sufficiency",
}

_INSTRUCTIONS = {
    Task.ATE: "Task: {name} ({code}). Compare the chance of the outcome when everyone is made to take the "
              "stated treatment value against the chance when everyone is made to take the opposite value.",
    Task.CDE: "Task: {name} ({code}). Compare the outcome under the two treatment values while the listed "
              "mediators are fixed by intervention at the stated values.",
    Task.ETT: "Task: {name} ({code}). Look only at units that actually have the stated treatment value and "
              "compare their outcome had the treatment been flipped with the outcome they actually have.",
    Task.NDE: "Task: {name} ({code}). Change the treatment while every mediator stays at the value it would "
              "naturally have without the change.",
    Task.NIE: "Task: {name} ({code}). Keep the treatment where it is and move the mediators to the values "
              "they would take if the treatment changed.",
    Task.PN: "Task: {name} ({code}). Bound the chance that, for a unit with both the treatment and the outcome, "
             "the outcome would have been absent had the treatment been absent.",
    Task.PS: "Task: {name} ({code}). Bound the chance that, for a unit with neither the treatment nor the "
             "outcome, the outcome would have appeared had the treatment been given.",
}

_FORMATS = {
    "binary": 'Answer "yes" or "no", and end your response with a JSON object such as {{"answer": "yes"}}.',
    "numeric": "Give the effect size rounded to {p} decimal places, and end your response with a JSON object "
               'such as {{"answer": 0.1234}}.',
    "bounds": "Give the lower and upper bound, each rounded to {p} decimal places, and end your response with "
              'a JSON object such as {{"answer": [0.1234, 0.5678]}}.',
}

_QUERIES = {
    Task.ATE: "If {t} is changed to be {x}, will the {o} be more likely to be {y}?",
    Task.ETT: "For those with {t} being {x}, if their {t} had been {xp}, would {o} have been more likely to be {y}?",
    Task.CDE: "Conditioned on {meds}, if {t} had been {x}, would {o} have been more likely to be {y}?",
    Task.NIE: "Suppose {t} is held constant and the mediator changes to whatever value it would have attained "
              "under {t} changing to be {x}, would the {o} have been more likely to be {y}?",
    Task.NDE: "Suppose the mediator keeps constant when {t} is changed to be {x}, would the {o} have been more "
              "likely to be {y}?",
    Task.PS: "Given that {t} was {xp} and {o} was {yp}, what is the lower bound and upper bound of the "
             "probability that {o} would have been {y} if the {t} had been {x}?",
    Task.PN: "Given that {t} was {x} and {o} was {y}, what is the lower bound and upper bound of the "
             "probability that {o} would have been {yp} if the {t} had been {xp}?",
}

LACK_CONDITION_HINT = "If the condition is not enough to solve the question, output 'LACK_CONDITION' as final answer."
COT_SUFFIX = "Let's think step by step."


# --------------------------------------------------------------------------
# statements


@dataclass(frozen=True)
class ProbabilityStatement:
    ref: ProbRef
    value: float
    text: str

    def to_dict(self) -> dict:
        return {**self.ref.to_dict(), "value": self.value, "text": self.text}

    @classmethod
    def from_dict(cls, data: dict) -> "ProbabilityStatement":
        return cls(ProbRef.from_dict(data), float(data["value"]), data["text"])


def _being(pairs, labels) -> str:
    return " and ".join(f"{labels[n]} being {v}" for n, v in pairs)


def render_statement(ref: ProbRef, value: float, labels: Sequence[str], precision: int) -> str:
    number = f"{value:.{precision}f}"
    if ref.conditions:
        return f"For those with {_being(ref.conditions, labels)}, the probability of {_being(ref.targets, labels)} is {number}."
    return f"The probability of {_being(ref.targets, labels)} is {number}."


def _labels_or_default(labels, n):
    return list(labels) if labels is not None else [f"V{i}" for i in range(n)]


def ref_value(joint: JointDistribution, ref: ProbRef) -> float:
    """P(ref) from ``joint``; the reference is already validated by construction."""
    if not ref.conditions:
        return joint.prob(dict(ref.targets))
    denom = joint.prob(dict(ref.conditions))
    if denom <= 0.0:
        raise UndefinedConditionalError(f"{ref.format()} conditions on a zero-probability event")
    return joint.prob(dict(ref.targets + ref.conditions)) / denom


def select_given_statements(
    solution: SolutionExpr,
    joint: JointDistribution,
    precision: int,
    labels: Sequence[str] | None = None,
) -> list[ProbabilityStatement]:
    """Evaluate each distinct reference of ``solution`` from ``joint`` and round it."""
    labels = _labels_or_default(labels, joint.node_count)
    out = []
    for ref in solution.refs():
        value = round(ref_value(joint, ref), precision) + 0.0
        out.append(ProbabilityStatement(ref, value, render_statement(ref, value, labels, precision)))
    return out


# --------------------------------------------------------------------------
# symbolic solutions


def _p(node: int, value: int, conditions: Mapping[int, int]) -> Expr:
    """P(node = value | conditions), stated through P(node = 1 | ...)."""
    ref = Ref(ProbRef(((node, 1),), tuple(conditions.items())))
    return ref if value == 1 else Const(1.0) - ref


def _configs(nodes: Sequence[int]):
    for bits in itertools.product((0, 1), repeat=len(nodes)):
        yield dict(zip(nodes, bits))


def _dist(nodes: Sequence[int], conditions: Mapping[int, int]) -> list[tuple[dict[int, int], Expr]]:
    """Distribution of the joint configuration of ``nodes``.

    Every configuration but the all-zero one is an explicit reference; the
    all-zero configuration is one minus the rest.
    """
    nodes = tuple(sorted(nodes))
    if len(nodes) == 1:
        (v,) = nodes
        return [({v: 0}, _p(v, 0, conditions)), ({v: 1}, _p(v, 1, conditions))]
    explicit = []
    for conf in _configs(nodes):
        if any(conf.values()):
            explicit.append((conf, Ref(ProbRef(tuple(conf.items()), tuple(conditions.items())))))
    zero = {v: 0 for v in nodes}
    return [(zero, Const(1.0) - total(e for _, e in explicit))] + explicit


def _adjusted(outcome: int, y: int, fixed: Mapping[int, int], zset: Sequence[int], weights: Mapping[int, int] | None = None) -> Expr:
    """sum_z P(outcome=y | fixed, z) P(z | weights); the plain conditional when Z is empty."""
    if not zset:
        return _p(outcome, y, dict(fixed))
    terms = []
    for zconf, pz in _dist(zset, dict(weights or {})):
        terms.append(_p(outcome, y, {**fixed, **zconf}) * pz)
    return total(terms)


def _mediation_sum(spec: EstimandSpec, zset, meds, body) -> Expr:
    """sum_{z} [sum_{m} body(m, z)] P(z)."""
    outer = []
    zconfs = _dist(zset, {}) if zset else [({}, None)]
    for zconf, pz in zconfs:
        inner = total(body(mconf, zconf) for mconf in _configs(meds))
        outer.append(inner if pz is None else inner * pz)
    return total(outer)


def _m_given(meds, mconf, conditions) -> Expr:
    for conf, e in _dist(meds, conditions):
        if conf == mconf:
            return e
    raise AssertionError("unreachable")


def adjustment_for(dag, spec: EstimandSpec) -> AdjustmentResult:
    """Covariate set the symbolic solution of ``spec`` adjusts for."""
    held = tuple(m for m, _ in spec.mediator_assignment)
    return _adjustment(dag, spec.task, spec.treatment, spec.outcome, held, spec.mediator_set)


@lru_cache(maxsize=4096)
def _adjustment(dag, task: Task, t: int, o: int, held: tuple[int, ...], mediator_set: tuple[int, ...]) -> AdjustmentResult:
    meds = tuple(sorted(mediators(dag, t, o)))
    if task is Task.CDE:
        return AdjustmentResult(joint_intervention_set(dag, {t, *held}, o), True, meds)
    if task in (Task.NDE, Task.NIE):
        return AdjustmentResult(mediation_set(dag, t, o, mediator_set), True, meds)
    return backdoor_sets(dag, t, o)


def _names(nodes, labels) -> str:
    return ", ".join(labels[n] for n in nodes) if nodes else "the empty set"


def build_symbolic_solution(graph: LabeledDag, spec: EstimandSpec, adj: AdjustmentResult) -> SolutionExpr:
    """Identification formula for ``spec`` using the covariates in ``adj``."""
    labels = graph.labels
    t, o = spec.treatment, spec.outcome
    x, xp, y = spec.treatment_value, spec.contrast_value, spec.outcome_value
    z = tuple(adj.backdoor_set)
    T, O = labels[t], labels[o]
    task = spec.task
    if task.needs_mediators and not adj.mediator_set:
        raise NotApplicableError(f"{task.value} needs a nonempty mediator set")

    if task is Task.ATE:
        do_x = _adjusted(o, y, {t: x}, z)
        do_xp = _adjusted(o, y, {t: xp}, z)
        root = do_x - do_xp
        steps = (
            Step(f"Back-door adjustment set for ({T}, {O}): {_names(z, labels)}"),
            Step(f"P({O}={y} | do({T}={x}))", do_x),
            Step(f"P({O}={y} | do({T}={xp}))", do_xp),
            Step("ATE", root),
        )
    elif task is Task.CDE:
        m = dict(spec.mediator_assignment)
        do_x = _adjusted(o, y, {t: x, **m}, z)
        do_xp = _adjusted(o, y, {t: xp, **m}, z)
        root = do_x - do_xp
        held = ", ".join(f"{labels[k]}={v}" for k, v in spec.mediator_assignment)
        steps = (
            Step(f"Adjustment set for the joint intervention on {T} and the mediators: {_names(z, labels)}"),
            Step(f"P({O}={y} | do({T}={x}, {held}))", do_x),
            Step(f"P({O}={y} | do({T}={xp}, {held}))", do_xp),
            Step("CDE", root),
        )
    elif task is Task.ETT:
        # x is observed; compare the flipped treatment with the actual one
        hyp = _adjusted(o, y, {t: xp}, z, weights={t: x})
        act = _p(o, y, {t: x})
        root = hyp - act
        steps = (
            Step(f"Back-door adjustment set for ({T}, {O}): {_names(z, labels)}"),
            Step(f"P({O}_{{{T}={xp}}}={y} | {T}={x})", hyp),
            Step(f"P({O}_{{{T}={x}}}={y} | {T}={x}) = P({O}={y} | {T}={x})", act),
            Step("ETT", root),
        )
    elif task in (Task.NDE, Task.NIE):
        meds = tuple(spec.mediator_set)
        if task is Task.NDE:
            def body(mconf, zconf):
                diff = _p(o, y, {t: x, **mconf, **zconf}) - _p(o, y, {t: xp, **mconf, **zconf})
                return diff * _m_given(meds, mconf, {t: xp, **zconf})
        else:
            def body(mconf, zconf):
                shift = _m_given(meds, mconf, {t: x, **zconf}) - _m_given(meds, mconf, {t: xp, **zconf})
                return _p(o, y, {t: xp, **mconf, **zconf}) * shift
        root = _mediation_sum(spec, z, meds, body)
        steps = (
            Step(f"Mediators of {T} -> {O}: {_names(meds, labels)}; covariate set: {_names(z, labels)}"),
            Step(task.value, root),
        )
    elif task in (Task.PN, Task.PS):
        p_y = _p(o, y, {})
        p_xy = Ref(ProbRef(((t, x), (o, y))))
        p_xpyp = Ref(ProbRef(((t, xp), (o, 1 - y))))
        if task is Task.PN:
            do_xp = _adjusted(o, y, {t: xp}, z)
            lower = Max((Const(0.0), (p_y - do_xp) / p_xy))
            upper = Min((Const(1.0), ((Const(1.0) - do_xp) - p_xpyp) / p_xy))
            do_step = Step(f"P({O}={y} | do({T}={xp}))", do_xp)
        else:
            do_x = _adjusted(o, y, {t: x}, z)
            lower = Max((Const(0.0), (do_x - p_y) / p_xpyp))
            upper = Min((Const(1.0), (do_x - p_xy) / p_xpyp))
            do_step = Step(f"P({O}={y} | do({T}={x}))", do_x)
        root = Bounds(lower, upper)
        steps = (
            Step(f"Back-door adjustment set for ({T}, {O}): {_names(z, labels)}"),
            do_step,
            Step(f"{task.value} lower bound", lower),
            Step(f"{task.value} upper bound", upper),
        )
    else:  # pragma: no cover
        raise InvalidArgumentError(f"unknown task {task}")
    return SolutionExpr(root, steps)


# --------------------------------------------------------------------------
# rendering


def describe_graph(graph: LabeledDag) -> str:
    labels = graph.labels
    head = (f"Consider a closed system of {graph.node_count} variables: {', '.join(labels)}. "
            "Every variable is either 0 or 1 and there are no hidden common causes.")
    if not graph.dag.edges:
        return head + " None of the variables affects another."
    links = " ".join(f"{labels[a]} has a direct effect on {labels[b]}." for a, b in graph.dag.edges)
    return f"{head} {links}"


def render_instruction(task: Task, answer_mode: str, precision: int = 4) -> str:
    body = _INSTRUCTIONS[task].format(name=TASK_NAMES[task], code=task.value)
    return f"{body} {_FORMATS[answer_mode].format(p=precision)}"


def render_query(graph: LabeledDag, spec: EstimandSpec) -> str:
    labels = graph.labels
    meds = ", ".join(f"{labels[m]} being {v}" for m, v in spec.mediator_assignment)
    return _QUERIES[spec.task].format(
        t=labels[spec.treatment], o=labels[spec.outcome],
        x=spec.treatment_value, xp=spec.contrast_value,
        y=spec.outcome_value, yp=1 - spec.outcome_value, meds=meds,
    )


def answer_mode_for(task: Task, scalar_mode: str = "binary") -> str:
    return "bounds" if task.is_bounds else scalar_mode


def render_question(graph: LabeledDag, spec: EstimandSpec, statements: Sequence[ProbabilityStatement],
                    answer_mode: str | None = None, precision: int = 4) -> tuple[str, str, str]:
    """(given_info_text, instruction_text, query_text) for one question."""
    mode = answer_mode or answer_mode_for(spec.task)
    given = " ".join([describe_graph(graph), *(s.text for s in statements)])
    return given, render_instruction(spec.task, mode, precision), render_query(graph, spec)


# --------------------------------------------------------------------------
# answers


def _round(v: float, precision: int) -> float:
    return round(v, precision) + 0.0


def evaluate_solution(solution: SolutionExpr, statements: Sequence[ProbabilityStatement]):
    return solution.evaluate({s.ref: s.value for s in statements})


def unresolved_refs(solution: SolutionExpr, statements: Sequence[ProbabilityStatement]) -> frozenset[ProbRef]:
    have = {s.ref for s in statements}
    return frozenset(r for r in solution.refs() if r not in have)


def value_to_answer(value, mode: str, precision: int = 4):
    if mode == "binary":
        return "yes" if value > 0 else "no"
    if mode == "numeric":
        return _round(value, precision)
    if mode == "bounds":
        lo, hi = value
        return (_round(lo, precision), _round(hi, precision))
    raise InvalidArgumentError(f"unknown answer mode {mode!r}")


def compute_answer(solution: SolutionExpr, statements: Sequence[ProbabilityStatement], mode: str, precision: int = 4):
    """Gold answer from the rounded statements, or ``LACK_CONDITION`` if a reference is missing."""
    try:
        value = evaluate_solution(solution, statements)
    except MissingReferenceError:
        return LACK_CONDITION
    return value_to_answer(value, mode, precision)


def answer_to_json(answer):
    return list(answer) if isinstance(answer, tuple) else answer


def answer_from_json(value):
    return tuple(float(v) for v in value) if isinstance(value, list) else value


def format_answer(answer, precision: int = 4) -> str:
    if isinstance(answer, tuple):
        return f"[{answer[0]:.{precision}f}, {answer[1]:.{precision}f}]"
    if isinstance(answer, float):
        return f"{answer:.{precision}f}"
    return str(answer)


# --------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class QuestionInstance:
    id: str
    task: Task
    mode: SemanticsMode
    context: str
    given_info: tuple[ProbabilityStatement, ...]
    instruction: str
    query: str
    answer: Any
    answer_mode: str
    solution: SolutionExpr
    metadata: dict = field(default_factory=dict, compare=False)
    # rewritten given-info prose; the structured statements stay authoritative
    given_info_prose: str | None = None

    @property
    def given_info_text(self) -> str:
        if self.given_info_prose is not None:
            return self.given_info_prose
        return " ".join([self.context, *(s.text for s in self.given_info)]).strip()

    @property
    def labels(self) -> list[str]:
        return list(self.metadata["graph"]["labels"])

    @property
    def precision(self) -> int:
        return int(self.metadata.get("render_precision", 4))

    def prompt(self, cot: bool = True) -> str:
        parts = [self.given_info_text, self.instruction, self.query]
        if self.metadata.get("variant") == "insufficient":
            parts.append(LACK_CONDITION_HINT)
        if cot:
            parts.append(COT_SUFFIX)
        return "\n".join(p for p in parts if p)

    def replace(self, **changes) -> "QuestionInstance":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "task": self.task.value,
            "mode": self.mode.value,
            "context": self.context,
            "given_info": [s.to_dict() for s in self.given_info],
            "given_info_text": self.given_info_text,
            "given_info_prose": self.given_info_prose,
            "instruction": self.instruction,
            "query": self.query,
            "answer": answer_to_json(self.answer),
            "answer_mode": self.answer_mode,
            "solution": {**self.solution.to_dict(), "prose": narrate(self).splitlines()},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuestionInstance":
        check_schema(data)
        return cls(
            id=data["id"],
            task=Task(data["task"]),
            mode=SemanticsMode(data["mode"]),
            context=data["context"],
            given_info=tuple(ProbabilityStatement.from_dict(s) for s in data["given_info"]),
            instruction=data["instruction"],
            query=data["query"],
            answer=answer_from_json(data["answer"]),
            answer_mode=data["answer_mode"],
            solution=SolutionExpr.from_dict(data["solution"]),
            metadata=data.get("metadata", {}),
            given_info_prose=data.get("given_info_prose"),
        )


def check_schema(record: dict, expected: str = SCHEMA_VERSION) -> None:
    got = str(record.get("schema_version", ""))
    if got.split(".")[0] != expected.split(".")[0]:
        raise SchemaError(f"unsupported schema_version {got!r} (expected major {expected.split('.')[0]})")


def narrate(instance: QuestionInstance) -> str:
    """Step-by-step reasoning text for the instance's own solution, ending in the final answer."""
    labels = instance.labels
    values = {s.ref: s.value for s in instance.given_info}
    p = instance.precision
    spec = instance.metadata.get("spec", {})
    lines = [f"We need the {TASK_NAMES[instance.task]} ({instance.task.value})"
             + (f" of {labels[spec['treatment']]} on {labels[spec['outcome']]}." if spec else ".")]
    used = [r for r in instance.solution.refs() if r in values]
    if used:
        lines.append("Relevant given probabilities: "
                     + "; ".join(f"{r.format(labels)} = {values[r]:.{p}f}" for r in used) + ".")
    for k, step in enumerate(instance.solution.steps, 1):
        if step.expr is None:
            lines.append(f"Step {k}: {step.title}.")
            continue
        text = f"Step {k}: {step.title} = {step.expr.format(labels)}"
        try:
            val = step.expr.evaluate(values)
        except (MissingReferenceError, ZeroDivisionError):
            lines.append(text + ".")
            continue
        lines.append(f"{text} = {format_answer(val, p) if isinstance(val, tuple) else f'{val:.{p}f}'}.")
    if instance.answer_mode == "binary" and instance.answer != LACK_CONDITION:
        sign = ">" if instance.answer == "yes" else "<="
        lines.append(f"The effect is {sign} 0, so the answer is {instance.answer}.")
    lines.append(f"Final answer: {format_answer(instance.answer, int(instance.metadata.get('answer_precision', p)))}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# generation


@dataclass
class _Context:
    config: GymConfig
    rng: np.random.Generator
    graph: LabeledDag
    scm: Scm
    exact: JointDistribution
    source: JointDistribution


def _full_values(solution: SolutionExpr, joint: JointDistribution):
    return solution.evaluate({r: ref_value(joint, r) for r in solution.refs()})


@lru_cache(maxsize=4096)
def _cached_solution(graph: LabeledDag, spec: EstimandSpec, adj: AdjustmentResult) -> SolutionExpr:
    return build_symbolic_solution(graph, spec, adj)


def _naive_spec_value(ctx: _Context, spec: EstimandSpec, adj: AdjustmentResult):
    naive = _cached_solution(ctx.graph, spec, AdjustmentResult((), False, adj.mediator_set))
    return _full_values(naive, ctx.exact)


def _distinct(a, b, precision: int) -> bool:
    if isinstance(a, tuple):
        return any(_round(u, precision) != _round(v, precision) for u, v in zip(a, b))
    return _round(a, precision) != _round(b, precision)


def _close(a, b, tol: float) -> bool:
    if isinstance(a, tuple):
        return all(abs(u - v) <= tol for u, v in zip(a, b))
    return abs(a - b) <= tol


def _spec_for(task: Task, dag, t: int, o: int, rng) -> EstimandSpec:
    x, y = int(rng.integers(2)), int(rng.integers(2))
    meds = tuple(sorted(mediators(dag, t, o)))
    m_assign = tuple((m, int(rng.integers(2))) for m in meds) if task is Task.CDE else ()
    m_set = meds if task in (Task.NDE, Task.NIE) else ()
    return EstimandSpec(task, t, x, o, y, m_assign, m_set)


def _try_spec(ctx: _Context, spec: EstimandSpec, deconfounding: bool, no_effect: bool):
    cfg, task = ctx.config, spec.task
    try:
        adj = adjustment_for(ctx.graph.dag, spec)
    except UnidentifiableError:
        return None
    if deconfounding and not adj.backdoor_set:
        return None
    solution = _cached_solution(ctx.graph, spec, adj)
    if len(solution.refs()) > cfg.max_probability_count or solution.expr.depth() > cfg.max_expression_depth:
        return None

    # screen with the full-precision formula; the oracle confirms it below
    mode = answer_mode_for(task, cfg.answer_mode)
    try:
        full = _full_values(solution, ctx.exact)
    except (UndefinedConditionalError, ZeroDivisionError):
        return None
    if mode == "bounds":
        if full[0] > full[1]:
            return None
    elif no_effect:
        if abs(full) > FULL_PRECISION_TOLERANCE:
            return None
    elif abs(full) < (cfg.sign_margin if mode == "binary" else 1e-12):
        return None

    naive = None
    if deconfounding:
        try:
            naive = _naive_spec_value(ctx, spec, adj)
        except (UndefinedConditionalError, ZeroDivisionError):
            return None
        if not _distinct(naive, full, cfg.render_precision):
            return None
        if mode == "binary" and (naive > 0) == (full > 0):
            return None

    try:
        statements = select_given_statements(solution, ctx.source, cfg.render_precision, ctx.graph.labels)
        rounded = evaluate_solution(solution, statements)
    except (UndefinedConditionalError, ZeroDivisionError):
        return None
    if mode == "bounds":
        if rounded[0] > rounded[1]:
            return None
    elif no_effect:
        if rounded != 0.0:
            return None
    elif mode == "binary" and (rounded > 0) != (full > 0):
        return None

    oracle = estimand(ctx.scm, spec, budget=cfg.counterfactual_budget)
    if not _close(full, oracle.value, FULL_PRECISION_TOLERANCE):
        raise AssertionError(f"identification formula disagrees with the oracle for {spec}: {full} vs {oracle.value}")

    answer = value_to_answer(rounded, mode, cfg.answer_precision)
    metadata = {
        "variant": "deconfounding" if deconfounding else "base",
        "graph": ctx.graph.to_dict(),
        "scm": ctx.scm.to_dict(),
        "spec": spec.to_dict(),
        "backdoor_set": list(adj.backdoor_set),
        "mediator_set": list(adj.mediator_set),
        "render_precision": cfg.render_precision,
        "answer_precision": cfg.answer_precision,
        "oracle_value": answer_to_json(oracle.value),
        "probability_source": cfg.probability_source,
    }
    if oracle.exact is not None:
        metadata["exact_counterfactual"] = oracle.exact
    if naive is not None:
        metadata["naive_value"] = answer_to_json(naive)
    _, instruction, query_text = render_question(ctx.graph, spec, statements, mode, cfg.answer_precision)
    return dict(
        task=task, mode=ctx.graph.mode, context=describe_graph(ctx.graph), given_info=tuple(statements),
        instruction=instruction, query=query_text, answer=answer, answer_mode=mode,
        solution=solution, metadata=metadata,
    )


def _pick_mode(cfg: GymConfig, rng) -> SemanticsMode:
    names = sorted(cfg.mode_mix)
    weights = np.array([cfg.mode_mix[n] for n in names], dtype=float)
    return SemanticsMode(names[int(rng.choice(len(names), p=weights / weights.sum()))])


def _draw_graph(cfg: GymConfig, rng, vocab: Vocabulary | None) -> LabeledDag:
    mode = _pick_mode(cfg, rng)
    n = int(rng.integers(cfg.min_nodes, cfg.max_nodes + 1))
    try:
        if mode is SemanticsMode.REAL:
            return sample_real_graph(vocab, n, rng, max_in_degree=cfg.max_in_degree)
        dag = generate_dag(n, cfg.edge_density, rng, max_nodes=cfg.max_nodes, max_in_degree=cfg.max_in_degree)
        return assign_semantics(dag, mode, vocab, rng)
    except SemanticsError as exc:
        raise RegenerateInstance(str(exc)) from None


def _eligible_pairs(dag, task: Task, no_effect: bool, deconfounding: bool) -> list[tuple[int, int]]:
    pairs = []
    for t in range(dag.node_count):
        below = descendants(dag, t)
        for o in range(dag.node_count):
            if o == t:
                continue
            if no_effect:
                if o not in below:
                    pairs.append((t, o))
            elif o in below and (not task.needs_mediators or mediators(dag, t, o)):
                # with every mediator fixed, CDE and NDE vanish unless t -> o is an edge
                if task in (Task.CDE, Task.NDE) and o not in dag.children(t):
                    continue
                pairs.append((t, o))
    if deconfounding:
        # the covariate set depends on which nodes are involved, not on their values
        keep = []
        for t, o in pairs:
            meds = tuple(sorted(mediators(dag, t, o)))
            probe = EstimandSpec(task, t, 1, o, 1, tuple((m, 0) for m in meds) if task is Task.CDE else (),
                                 meds if task in (Task.NDE, Task.NIE) else ())
            try:
                if adjustment_for(dag, probe).backdoor_set:
                    keep.append((t, o))
            except UnidentifiableError:
                pass
        pairs = keep
    return pairs


def _attempt(cfg: GymConfig, task: Task, rng, vocab: Vocabulary | None, deconfounding: bool):
    graph = _draw_graph(cfg, rng, vocab)
    no_effect = task is Task.ATE and not deconfounding and rng.random() < cfg.no_effect_fraction
    pairs = _eligible_pairs(graph.dag, task, no_effect, deconfounding)
    if not pairs:
        raise RegenerateInstance("graph has no eligible treatment/outcome pair")
    # deconfounding keeps a graph that admits confounding and redraws only the mechanisms
    for _ in range(cfg.deconfounding_param_draws if deconfounding else 1):
        scm = instantiate_scm(graph, tuple(cfg.weight_range), rng, bias_range=tuple(cfg.bias_range))
        exact = exact_joint(scm)
        if cfg.probability_source == "sampled":
            source = JointDistribution.from_samples(sample(scm, cfg.sample_count, int(rng.integers(2**31))))
        else:
            source = exact
        ctx = _Context(cfg, rng, graph, scm, exact, source)
        for i in rng.permutation(len(pairs)):
            t, o = pairs[int(i)]
            found = _try_spec(ctx, _spec_for(task, graph.dag, t, o, rng), deconfounding, no_effect)
            if found is not None:
                return found
    raise RegenerateInstance("no pair produced a usable question")


_VOCABULARIES: dict[str | None, Vocabulary] = {}


def _cached_vocabulary(path: str | None) -> Vocabulary:
    if path not in _VOCABULARIES:
        _VOCABULARIES[path] = load_vocabulary(path)
    return _VOCABULARIES[path]


def generate_instance(
    config: GymConfig,
    seed,
    task: Task | str | None = None,
    *,
    instance_id: str | None = None,
    deconfounding: bool = False,
    vocabulary: Vocabulary | None = None,
) -> QuestionInstance:
    """Build one question instance; degenerate draws are retried up to ``config.retry_cap``.

    ``seed`` is an int or a tuple of ints (e.g. ``(base_seed, index)``); every
    retry draws from its own child stream so results are reproducible.
    """
    task = Task(task or config.task_list[0])
    entropy = [int(s) for s in (seed if isinstance(seed, (tuple, list)) else (seed,))]
    if vocabulary is None and any(m in config.mode_mix and config.mode_mix[m] > 0 for m in ("Real", "Random")):
        vocabulary = _cached_vocabulary(config.vocabulary)
    last = None
    cap = config.deconfounding_retry_cap if deconfounding else config.retry_cap
    for attempt in range(cap):
        rng = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(attempt,)))
        try:
            fields = _attempt(config, task, rng, vocabulary, deconfounding)
        except RegenerateInstance as exc:
            last = exc
            continue
        fields["metadata"].update({"seed": entropy, "attempt": attempt})
        return QuestionInstance(id=instance_id or "-".join(map(str, entropy)), **fields)
    raise GenerationError(f"{task.value}: retry cap of {cap} exhausted (last reason: {last})")


def rounding_error_bound(solution: SolutionExpr, statements: Sequence[ProbabilityStatement], precision: int) -> float:
    """First-order bound on how far rounding the statements can move the solution value.

    Sum over references of |partial derivative| times half a unit in the last
    rendered place, with partials taken by central differences.
    """
    values = {s.ref: s.value for s in statements}
    half = 0.5 * 10.0 ** (-precision)
    h = 1e-7
    bound = 0.0
    for ref in solution.refs():
        up, down = dict(values), dict(values)
        up[ref] += h
        down[ref] -= h
        a, b = solution.evaluate(up), solution.evaluate(down)
        if isinstance(a, tuple):
            slope = max(abs(u - v) for u, v in zip(a, b)) / (2 * h)
        else:
            slope = abs(a - b) / (2 * h)
        bound += slope * half
    return bound
