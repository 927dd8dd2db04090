"""Evaluation variants derived from base instances."""
from __future__ import annotations

import json
import logging
import re
import threading
import time
import urllib.error
import urllib.request
from collections import Counter
from collections.abc import Sequence
from typing import Protocol

import numpy as np

from ._validation import check_random_state
from .config import GymConfig
from .exceptions import GenerationError, RegenerateInstance, RewriterError, SkipInstance, UndefinedConditionalError
from .expr import ProbRef
from .questions import (
    LACK_CONDITION,
    ProbabilityStatement,
    QuestionInstance,
    generate_instance,
    render_statement,
)
from .scm import JointDistribution, Scm, exact_joint, query

log = logging.getLogger(__name__)

DECIMAL = re.compile(r"\d+\.\d+")

REPHRASE_PROMPT = (
    "Rewrite the user's text in different words while keeping its meaning. Copy every number and every "
    "variable name exactly as written. Do not add, drop or solve anything. Reply with the rewritten text only."
)
OMIT_PROMPT = (
    "Rewrite the user's text in different words while keeping its meaning. Do not name any kind of causal "
    "quantity or task. Copy every number and every variable name exactly as written. Reply with the rewritten "
    "text only."
)


class RewriterPort(Protocol):
    name: str

    def rewrite(self, system_prompt: str, content: str) -> str: ...


class IdentityRewriter:
    name = "identity"

    def rewrite(self, system_prompt: str, content: str) -> str:
        return content


# sentence-level rewrites over the fixed template vocabulary; labels and numbers pass through untouched
_RULES: tuple[tuple[re.Pattern, str], ...] = tuple(
    (re.compile(p), r)
    for p, r in (
        (r"^For those with (.+?), the probability of (.+?) is (\d+\.\d+)\.$", r"The probability of \2 is \3 for those with \1."),
        (r"^The probability of (.+?) is (\d+\.\d+)\.$", r"With probability \2, we observe \1."),
        (r"^(.+?) has a direct effect on (.+?)\.$", r"\2 is directly influenced by \1."),
        (r"^Consider a closed system of (\d+) variables: (.+?)\.$", r"The system under study has \1 variables: \2."),
        (r"^Every variable is either 0 or 1 and there are no hidden common causes\.$",
         r"Each variable takes the value 0 or 1, and no unobserved variable affects two of them."),
        (r"^None of the variables affects another\.$", r"No variable influences any other."),
        (r"^If (.+?) is changed to be (\d), will the (.+?) be more likely to be (\d)\?$",
         r"Would setting \1 to \2 make \3 = \4 more likely?"),
    )
)


def _sentences(text: str) -> list[str]:
    # a decimal point is never followed by whitespace, so this only splits at sentence ends
    return [s for s in re.split(r"(?<=[.?!])\s+", text.strip()) if s]


class RuleBasedParaphraser:
    """Deterministic clause-order and wording swaps on the template sentences."""

    name = "rule"

    def rewrite(self, system_prompt: str, content: str) -> str:
        out = []
        for sentence in _sentences(content):
            for pattern, repl in _RULES:
                if pattern.match(sentence):
                    sentence = pattern.sub(repl, sentence)
                    break
            out.append(sentence)
        return " ".join(out)


def _redact(text: str) -> str:
    return DECIMAL.sub("<num>", text)


class ChatCompletionRewriter:
    """Client for an OpenAI-compatible chat-completion endpoint.

    The URL and key come from ``GYM_LLM_URL`` / ``GYM_LLM_KEY``. At most
    ``max_in_flight`` requests run at once; failed calls are retried with
    exponential backoff and then surface as :class:`RewriterError`.
    """

    name = "llm"

    def __init__(self, url: str, key: str | None = None, *, model: str = "gpt-4o-mini", temperature: float = 0.7,
                 timeout: float = 60.0, max_in_flight: int = 4, retries: int = 3, backoff: float = 1.0,
                 verbose: bool = False):
        self.url, self.key, self.model = url, key, model
        self.temperature, self.timeout = temperature, timeout
        self.retries, self.backoff, self.verbose = retries, backoff, verbose
        self._slots = threading.BoundedSemaphore(max_in_flight)

    @classmethod
    def from_config(cls, config: GymConfig) -> "ChatCompletionRewriter":
        url, key = config.llm_endpoint()
        if not url:
            raise RewriterError("GYM_LLM_URL is not set")
        return cls(url, key, model=config.llm_model, temperature=config.llm_temperature, timeout=config.llm_timeout,
                   max_in_flight=config.llm_max_in_flight, retries=config.llm_retries, verbose=config.llm_verbose)

    def rewrite(self, system_prompt: str, content: str) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": "system", "content": system_prompt}, {"role": "user", "content": content}],
            "temperature": self.temperature,
        }
        data = json.dumps(body).encode()
        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        if self.verbose:
            log.info("rewriter request: %s", _redact(json.dumps(body)))
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    req = urllib.request.Request(self.url, data=data, headers=headers, method="POST")
                    with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                        payload = json.loads(resp.read().decode())
            except urllib.error.HTTPError as exc:
                last = exc
                if exc.code < 500 and exc.code != 429:
                    break
                continue
            except (urllib.error.URLError, TimeoutError, OSError, json.JSONDecodeError) as exc:
                last = exc
                continue
            if self.verbose:
                log.info("rewriter response: %s", _redact(json.dumps(payload)))
            try:
                return payload["choices"][0]["message"]["content"].strip()
            except (KeyError, IndexError, TypeError, AttributeError) as exc:
                last = exc
                continue
        raise RewriterError(f"chat completion failed after {self.retries + 1} attempt(s): {last}")


def make_rewriter(config: GymConfig) -> RewriterPort:
    if config.rewriter == "identity":
        return IdentityRewriter()
    if config.rewriter == "rule":
        return RuleBasedParaphraser()
    return ChatCompletionRewriter.from_config(config)


# --------------------------------------------------------------------------
# rephrase / omit


def decimal_multiset(text: str) -> Counter:
    return Counter(DECIMAL.findall(text))


def _preserves(original: str, rewritten: str, labels: Sequence[str]) -> bool:
    if decimal_multiset(original) != decimal_multiset(rewritten):
        return False
    return all(label in rewritten for label in labels if label in original)


def _rewrite_fields(fields: dict[str, str], rewriter: RewriterPort, prompt: str, labels, attempts: int):
    """Rewrite every field, or return None if some field never validates."""
    out = {}
    for key, text in fields.items():
        if not text:
            out[key] = text
            continue
        for _ in range(attempts):
            try:
                candidate = rewriter.rewrite(prompt, text)
            except RewriterError as exc:
                log.warning("rewriter failed on %s: %s", key, exc)
                continue
            if candidate and _preserves(text, candidate, labels):
                out[key] = candidate
                break
        else:
            return None
    return out


def _paraphrase(instance: QuestionInstance, rewriter: RewriterPort, prompt: str, keep_instruction: bool,
                attempts: int, allow_fallback: bool) -> tuple[dict[str, str], str, bool]:
    fields = {"given": instance.given_info_text, "query": instance.query}
    if keep_instruction:
        fields["instruction"] = instance.instruction
    labels = instance.labels
    done = _rewrite_fields(fields, rewriter, prompt, labels, attempts)
    if done is not None:
        return done, rewriter.name, False
    if not allow_fallback:
        raise RewriterError(f"{instance.id}: rewrite failed validation {attempts} time(s)")
    fallback = RuleBasedParaphraser()
    done = _rewrite_fields(fields, fallback, prompt, labels, 1)
    if done is None:  # pragma: no cover - the rule rewriter preserves numbers and labels by construction
        raise RewriterError(f"{instance.id}: fallback paraphrase failed validation")
    return done, fallback.name, True


def rephrase(instance: QuestionInstance, rewriter: RewriterPort, *, attempts: int = 3,
             allow_fallback: bool = True) -> QuestionInstance:
    """Paraphrase given info, instruction and query; answer and solution are untouched."""
    done, used, fell_back = _paraphrase(instance, rewriter, REPHRASE_PROMPT, True, attempts, allow_fallback)
    meta = {**instance.metadata, "variant": "rephrased", "source_id": instance.id,
            "rewriter": used, "rewrite_fallback": fell_back}
    return instance.replace(id=f"{instance.id}-rephrased", given_info_prose=done["given"],
                            instruction=done["instruction"], query=done["query"], metadata=meta)


def omit_instruction(instance: QuestionInstance, rewriter: RewriterPort, *, attempts: int = 3,
                     allow_fallback: bool = True) -> QuestionInstance:
    """Drop the instruction so the text no longer names the task; the task stays in metadata."""
    done, used, fell_back = _paraphrase(instance, rewriter, OMIT_PROMPT, False, attempts, allow_fallback)
    meta = {**instance.metadata, "variant": "omitted", "source_id": instance.id, "task": instance.task.value,
            "rewriter": used, "rewrite_fallback": fell_back}
    return instance.replace(id=f"{instance.id}-omitted", given_info_prose=done["given"], instruction="",
                            query=done["query"], metadata=meta)


# --------------------------------------------------------------------------
# deconfounding


def make_deconfounding_pool(config: GymConfig, seed: int, *, per_task: int | None = None) -> list[QuestionInstance]:
    """Fresh instances that need a nonempty adjustment set and defeat the unadjusted formula."""
    per_task = config.stress_per_task if per_task is None else per_task
    pool = []
    for k, task in enumerate(config.task_list):
        for i in range(per_task):
            pool.append(generate_instance(config, (seed, 1, k, i), task, deconfounding=True,
                                          instance_id=f"{task.value}-{i}-deconfounding"))
    return pool


# --------------------------------------------------------------------------
# redundant / insufficient


def _instance_joint(instance: QuestionInstance) -> JointDistribution:
    return exact_joint(Scm.from_dict(instance.metadata["scm"]))


def add_redundant(instance: QuestionInstance, joint: JointDistribution | None = None, count: int = 2,
                  seed=0) -> QuestionInstance:
    """Insert ``count`` true statements the solution never uses, at random positions."""
    rng = check_random_state(seed)
    joint = _instance_joint(instance) if joint is None else joint
    n = joint.node_count
    taken = set(instance.solution.refs()) | {s.ref for s in instance.given_info}
    pool = [ProbRef(((v, 1),)) for v in range(n)]
    pool += [ProbRef(((v, 1),), ((w, b),)) for v in range(n) for w in range(n) if w != v for b in (0, 1)]
    pool = [r for r in pool if r not in taken]
    order = rng.permutation(len(pool))
    labels = instance.labels
    added: list[ProbabilityStatement] = []
    for i in order:
        ref = pool[int(i)]
        try:
            value = round(query(joint, dict(ref.targets), dict(ref.conditions)), instance.precision) + 0.0
        except UndefinedConditionalError:
            continue
        added.append(ProbabilityStatement(ref, value, render_statement(ref, value, labels, instance.precision)))
        if len(added) == count:
            break
    if len(added) < count:
        raise RegenerateInstance(f"{instance.id}: cannot mint {count} unused statements")
    given = list(instance.given_info)
    for st in added:
        given.insert(int(rng.integers(len(given) + 1)), st)
    meta = {**instance.metadata, "variant": "redundant", "source_id": instance.id,
            "added_refs": [s.ref.to_dict() for s in added]}
    return instance.replace(id=f"{instance.id}-redundant", given_info=tuple(given), metadata=meta)


def remove_necessary(instance: QuestionInstance, count: int = 2, seed=0) -> QuestionInstance:
    """Delete ``count`` statements the solution needs; the gold answer becomes LACK_CONDITION."""
    rng = check_random_state(seed)
    needed = set(instance.solution.refs())
    positions = [i for i, s in enumerate(instance.given_info) if s.ref in needed]
    if len(positions) < count:
        raise SkipInstance(f"{instance.id}: only {len(positions)} necessary statement(s)")
    drop = {positions[int(i)] for i in rng.choice(len(positions), size=count, replace=False)}
    kept = tuple(s for i, s in enumerate(instance.given_info) if i not in drop)
    removed = [instance.given_info[i].ref.to_dict() for i in sorted(drop)]
    meta = {**instance.metadata, "variant": "insufficient", "source_id": instance.id, "removed_refs": removed}
    return instance.replace(id=f"{instance.id}-insufficient", given_info=kept, answer=LACK_CONDITION, metadata=meta)


# --------------------------------------------------------------------------
# stress sets


VARIANTS = ("rephrased", "omitted", "deconfounding", "redundant", "insufficient")


def _sources(config: GymConfig, seed: int, variant_index: int, per_task: int):
    for k, task in enumerate(config.task_list):
        for i in range(per_task):
            yield k, task, i, (seed, 2, variant_index, k, i)


def build_stress_set(config: GymConfig, variant: str, seed: int, *, rewriter: RewriterPort | None = None,
                     per_task: int | None = None) -> list[QuestionInstance]:
    """``per_task`` instances of one variant for every configured task, in task-then-index order."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown stress variant {variant!r}; choose from {VARIANTS}")
    per_task = config.stress_per_task if per_task is None else per_task
    if variant == "deconfounding":
        return make_deconfounding_pool(config, seed, per_task=per_task)
    rewriter = rewriter or (make_rewriter(config) if variant in ("rephrased", "omitted") else None)
    v = VARIANTS.index(variant)
    out = []
    for k, task, i, key in _sources(config, seed, v, per_task):
        for retry in range(config.retry_cap):
            base = generate_instance(config, key + (retry,), task, instance_id=f"{task.value}-{i}")
            rng = np.random.default_rng(np.random.SeedSequence(list(key) + [retry, 99]))
            try:
                if variant == "rephrased":
                    inst = rephrase(base, rewriter, attempts=config.rewrite_attempts, allow_fallback=config.allow_fallback)
                elif variant == "omitted":
                    inst = omit_instruction(base, rewriter, attempts=config.rewrite_attempts,
                                            allow_fallback=config.allow_fallback)
                elif variant == "redundant":
                    inst = add_redundant(base, None, config.redundant_count, rng)
                else:
                    inst = remove_necessary(base, config.removed_count, rng)
            except (RegenerateInstance, SkipInstance):
                continue
            out.append(inst)
            break
        else:
            raise GenerationError(f"{variant}/{task.value}/{i}: retry cap exhausted")
    return out
