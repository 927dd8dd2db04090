"""Post-training record formats (SFT, DPO, KTO, RL) and the RL reward."""
from __future__ import annotations

import logging
import re
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass

import numpy as np

from ._validation import check_random_state
from .config import GymConfig
from .exceptions import InvalidArgumentError, RewriterError, SkipInstance
from .grade import _structured_answers, normalize_answer, parse_final_answer, render_answer, score
from .questions import LACK_CONDITION, QuestionInstance, answer_to_json, format_answer, narrate
from .stressors import IdentityRewriter, RewriterPort

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
THINK_OPEN, THINK_CLOSE = "<think>", "</think>"

POLISH_PROMPT = (
    "Rewrite the worked solution below as a natural step-by-step explanation. Keep every number, variable "
    "name and the final answer exactly as given, and end with the same final answer line."
)
UNGUIDED_PROMPT = "Solve the question step by step and end with a JSON object holding the final answer."


def answer_text(answer, precision: int = 4) -> str:
    return format_answer(answer, precision)


def format_response(reasoning: str, answer) -> str:
    """A completion in the expected output shape: one think block, then the JSON answer."""
    return f"{THINK_OPEN}\n{reasoning.strip()}\n{THINK_CLOSE}\n{render_answer(answer)}"


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class SftRecord:
    id: str
    prompt: str
    reasoning: str
    answer: str
    task: str
    fallback: bool = False

    @property
    def completion(self) -> str:
        return format_response(self.reasoning, _parse_answer_text(self.answer))

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self), "completion": self.completion}


def _parse_answer_text(text: str):
    if text in ("yes", "no", LACK_CONDITION):
        return text
    if text.startswith("["):
        lo, hi = text.strip("[]").split(",")
        return (float(lo), float(hi))
    return float(text)


@dataclass(frozen=True)
class Negative:
    reasoning: str
    answer: str | None
    reason: str  # wrong_answer | verbose | incomplete | misaligned


@dataclass(frozen=True)
class PreferencePair:
    id: str
    prompt: str
    chosen: str
    rejected: str
    chosen_answer: str
    rejected_answer: str | None
    rejected_reason: str

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}


@dataclass(frozen=True)
class KtoRecord:
    id: str
    prompt: str
    completion: str
    label: str

    def __post_init__(self):
        if self.label not in ("desirable", "undesirable"):
            raise InvalidArgumentError(f"KTO label must be desirable or undesirable, got {self.label!r}")

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}


@dataclass(frozen=True)
class RlRecord:
    id: str
    prompt: str
    gold_answer: object
    task: str
    answer_mode: str
    precision: int = 4

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "id": self.id, "prompt": self.prompt,
                "gold_answer": answer_to_json(self.gold_answer), "task": self.task,
                "answer_mode": self.answer_mode, "precision": self.precision}

    @classmethod
    def from_dict(cls, data: dict) -> "RlRecord":
        gold = data["gold_answer"]
        return cls(data["id"], data["prompt"], tuple(gold) if isinstance(gold, list) else gold, data["task"],
                   data["answer_mode"], int(data.get("precision", 4)))


def _gold_mode(instance: QuestionInstance) -> str:
    return instance.answer_mode


def _answers_gold(text: str, instance: QuestionInstance) -> bool:
    parsed = parse_final_answer(text, _gold_mode(instance))
    return score(parsed, instance.answer, _gold_mode(instance), precision=instance.precision).correct


# --------------------------------------------------------------------------
# SFT


def to_sft(instance: QuestionInstance, reasoner: RewriterPort | None = None, *, attempts: int = 3) -> SftRecord:
    """Guided trace for the instance; falls back to the template narration when polishing fails."""
    draft = narrate(instance)
    reasoner = reasoner or IdentityRewriter()
    gold = answer_text(instance.answer, instance.precision)
    if isinstance(reasoner, IdentityRewriter):
        return SftRecord(instance.id, instance.prompt(), draft, gold, instance.task.value)
    for _ in range(attempts):
        try:
            polished = reasoner.rewrite(POLISH_PROMPT, draft)
        except RewriterError as exc:
            log.warning("reasoner failed on %s: %s", instance.id, exc)
            continue
        if polished and _answers_gold(polished, instance):
            return SftRecord(instance.id, instance.prompt(), polished, gold, instance.task.value)
    return SftRecord(instance.id, instance.prompt(), draft, gold, instance.task.value, fallback=True)


# --------------------------------------------------------------------------
# negatives


def _required_values(instance: QuestionInstance) -> list[str]:
    """Rendered values of the statements the solution uses, in solution order."""
    p = instance.precision
    values = {s.ref: f"{s.value:.{p}f}" for s in instance.given_info}
    return [values[r] for r in instance.solution.refs() if r in values]


def mine_negative(instance: QuestionInstance, candidate_traces: Sequence[str], *, reference: str | None = None,
                  length_multiple: float = 3.0) -> Negative | None:
    """Pick a dispreferred trace: a wrong final answer first, then a quality failure."""
    mode = _gold_mode(instance)
    for trace in candidate_traces:
        parsed = parse_final_answer(trace, mode)
        if not score(parsed, instance.answer, mode, precision=instance.precision).correct:
            shown = None if parsed is None else answer_text(parsed, instance.precision)
            return Negative(trace, shown, "wrong_answer")
    reference = narrate(instance) if reference is None else reference
    required = _required_values(instance)
    gold = answer_text(instance.answer, instance.precision)
    for trace in candidate_traces:
        if len(trace) > length_multiple * len(reference):
            return Negative(trace, gold, "verbose")
        if any(v not in trace for v in required):
            return Negative(trace, gold, "incomplete")
        firsts = [trace.find(v) for v in dict.fromkeys(required)]
        if firsts != sorted(firsts):
            return Negative(trace, gold, "misaligned")
    return None


def _corrupt(answer, rng: np.random.Generator, precision: int):
    if answer == LACK_CONDITION:
        return "yes"
    if isinstance(answer, str):
        return "no" if answer == "yes" else "yes"
    step = 10.0 ** -precision * int(rng.integers(50, 500))
    if isinstance(answer, tuple):
        lo, hi = answer
        return (round(max(0.0, lo - step), precision), round(min(1.0, hi + step), precision)) \
            if (lo, hi) != (0.0, 1.0) else (0.5, 0.5)
    return round(-answer if answer else step, precision)


def synthetic_candidates(instance: QuestionInstance, seed=0) -> list[str]:
    """Offline stand-ins for unguided responses: a wrong-answer, an incomplete and a verbose trace."""
    rng = check_random_state(seed)
    p = instance.precision
    lines = narrate(instance).splitlines()
    wrong = _corrupt(instance.answer, rng, p)
    wrong_lines = [ln for ln in lines if not ln.startswith(("Final answer", "The effect is"))]
    wrong_trace = "\n".join(wrong_lines + [f"Final answer: {answer_text(wrong, p)}"])
    incomplete = [ln for ln in lines if not ln.startswith(("Relevant given", "Step"))]
    verbose = lines[:-1] * 4 + lines[-1:]
    traces = [
        format_response("\n".join(wrong_trace.splitlines()), wrong),
        format_response("\n".join(incomplete[:-1]), instance.answer),
        format_response("\n".join(verbose[:-1]), instance.answer),
    ]
    order = rng.permutation(len(traces))
    return [traces[int(i)] for i in order]


def sample_candidates(instance: QuestionInstance, client: RewriterPort, count: int = 4) -> list[str]:
    """Unguided responses from a chat model; failed calls are skipped."""
    out = []
    for _ in range(count):
        try:
            out.append(client.rewrite(UNGUIDED_PROMPT, instance.prompt()))
        except RewriterError as exc:
            log.warning("candidate sampling failed on %s: %s", instance.id, exc)
    return out


# --------------------------------------------------------------------------
# preference formats


def to_preference_pair(instance: QuestionInstance, positive: SftRecord, negative: Negative | None) -> PreferencePair:
    if negative is None:
        raise SkipInstance(f"{instance.id}: no negative trace")
    chosen = positive.completion
    rejected = negative.reasoning if THINK_OPEN in negative.reasoning else format_response(
        negative.reasoning, _parse_answer_text(negative.answer) if negative.answer else "")
    if rejected == chosen:
        raise SkipInstance(f"{instance.id}: negative trace equals the positive one")
    return PreferencePair(instance.id, positive.prompt, chosen, rejected, positive.answer, negative.answer,
                          negative.reason)


def to_kto_corpus(instances: Sequence[QuestionInstance], positives: Sequence[SftRecord],
                  negatives: Mapping[str, Sequence[Negative]] | Sequence[tuple[str, Negative]], seed=0) -> list[KtoRecord]:
    """Labelled completions balanced to exactly 1:1 by seeded subsampling of the larger side."""
    prompts = {inst.id: inst.prompt() for inst in instances}
    good = [KtoRecord(p.id, p.prompt, p.completion, "desirable") for p in positives]
    pairs = [(k, n) for k, ns in negatives.items() for n in ns] if isinstance(negatives, Mapping) else list(negatives)
    bad = []
    for key, neg in pairs:
        completion = neg.reasoning if THINK_OPEN in neg.reasoning else format_response(neg.reasoning, neg.answer or "")
        bad.append(KtoRecord(key, prompts[key], completion, "undesirable"))
    if not good or not bad:
        raise InvalidArgumentError(f"KTO needs both labels (got {len(good)} desirable, {len(bad)} undesirable)")
    rng = check_random_state(seed)
    keep = min(len(good), len(bad))

    def subsample(records):
        if len(records) == keep:
            return records
        chosen = sorted(rng.choice(len(records), size=keep, replace=False).tolist())
        return [records[i] for i in chosen]

    return subsample(good) + subsample(bad)


def to_rl_record(instance: QuestionInstance) -> RlRecord:
    return RlRecord(instance.id, instance.prompt(), instance.answer, instance.task.value, instance.answer_mode,
                    instance.precision)


# --------------------------------------------------------------------------
# reward


@dataclass(frozen=True)
class RewardResult:
    total: float
    answer: bool
    think: bool
    json: bool

    def to_dict(self) -> dict:
        return asdict(self)


_THINK = re.compile(re.escape(THINK_OPEN) + r"(.*?)" + re.escape(THINK_CLOSE), re.DOTALL)


def _think_ok(text: str, mode: str) -> bool:
    if text.count(THINK_OPEN) != 1 or text.count(THINK_CLOSE) != 1:
        return False
    m = _THINK.search(text)
    if m is None or not m.group(1).strip():
        return False
    return parse_final_answer(text[m.end():], mode) is not None


def _json_ok(text: str, mode: str) -> bool:
    found = _structured_answers(text)
    return bool(found) and normalize_answer(found[-1][1], mode) is not None


def reward(response_text: str, record: RlRecord, weights: GymConfig | None = None) -> RewardResult:
    """Weighted sum of answer correctness, think-block format and JSON answer format."""
    w = weights or GymConfig()
    mode = record.answer_mode
    parsed = parse_final_answer(response_text, mode)
    ok = score(parsed, record.gold_answer, mode, w.grade_tolerance, precision=record.precision).correct
    think = _think_ok(response_text or "", mode)
    js = _json_ok(response_text or "", mode)
    total = w.reward_answer * ok + w.reward_think * think + w.reward_json * js
    return RewardResult(total, ok, think, js)


def max_reward(weights: GymConfig | None = None) -> float:
    w = weights or GymConfig()
    return w.reward_answer + w.reward_think + w.reward_json
