"""Answer extraction, exact-match scoring and per-task accuracy reports."""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

from .exceptions import JoinError
from .oracle import ALL_TASKS
from .questions import LACK_CONDITION, answer_to_json

COLUMNS = tuple(t.value for t in ALL_TASKS) + ("Avg",)
FAILURE_KINDS = ("none", "parse", "wrong", "missing_lack_condition", "spurious_lack_condition")

_NUM = r"-?\d+(?:\.\d+)?"
_PAIR = re.compile(rf"\[\s*({_NUM})\s*,\s*({_NUM})\s*\]")
_YESNO = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_DECIMAL = re.compile(_NUM)


def render_answer(answer) -> str:
    """Canonical structured final answer, e.g. ``{"answer": "yes"}``."""
    return json.dumps({"answer": answer_to_json(answer)})


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def normalize_answer(value, answer_mode: str):
    """Coerce a raw answer value into the shape ``answer_mode`` expects, or None."""
    if isinstance(value, str):
        text = value.strip()
        if text.upper() == LACK_CONDITION:
            return LACK_CONDITION
        if answer_mode == "binary":
            low = text.casefold()
            return low if low in ("yes", "no") else None
        if answer_mode == "bounds":
            m = _PAIR.fullmatch(text)
            return (float(m.group(1)), float(m.group(2))) if m else None
        if answer_mode == "numeric":
            return float(text) if re.fullmatch(_NUM, text) else None
        return None
    if answer_mode == "numeric" and _is_number(value):
        return float(value)
    if answer_mode == "bounds" and isinstance(value, (list, tuple)) and len(value) == 2 and all(map(_is_number, value)):
        return (float(value[0]), float(value[1]))
    return None


def _structured_answers(text: str):
    """Every decodable JSON object with an ``answer`` key, as (start, value)."""
    decoder = json.JSONDecoder()
    found = []
    for i, ch in enumerate(text):
        if ch != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and "answer" in obj:
            found.append((i, obj["answer"]))
    return found


def structured_answer(text: str, answer_mode: str):
    """Answer from the last well-formed ``{"answer": ...}`` object, or None."""
    for _, value in reversed(_structured_answers(text)):
        parsed = normalize_answer(value, answer_mode)
        if parsed is not None:
            return parsed
    return None


def _line_answer(line: str, answer_mode: str):
    if LACK_CONDITION in line.upper():
        return LACK_CONDITION
    if answer_mode == "binary":
        hits = _YESNO.findall(line)
        return hits[-1].casefold() if hits else None
    if answer_mode == "bounds":
        hits = _PAIR.findall(line)
        return (float(hits[-1][0]), float(hits[-1][1])) if hits else None
    if answer_mode == "numeric":
        hits = _DECIMAL.findall(line)
        return float(hits[-1]) if hits else None
    return None


def parse_final_answer(text: str | None, answer_mode: str):
    """Final answer of a response, or None when nothing can be extracted.

    The last structured object carrying an ``answer`` field wins; otherwise
    the last line that matches the mode's pattern (or names LACK_CONDITION).
    """
    if not text:
        return None
    parsed = structured_answer(text, answer_mode)
    if parsed is not None:
        return parsed
    for line in reversed(text.strip().splitlines()):
        parsed = _line_answer(line, answer_mode)
        if parsed is not None:
            return parsed
    return None


@dataclass(frozen=True)
class GradeResult:
    instance_id: str
    parsed: object
    correct: bool
    failure_kind: str = "none"

    def __post_init__(self):
        if self.failure_kind not in FAILURE_KINDS:
            raise ValueError(f"unknown failure kind {self.failure_kind!r}")
        if self.correct and self.failure_kind != "none":
            raise ValueError("a correct result cannot carry a failure kind")

    def to_dict(self) -> dict:
        return {"instance_id": self.instance_id, "parsed": answer_to_json(self.parsed), "correct": self.correct,
                "failure_kind": self.failure_kind}


def _canonical(v: float, precision: int) -> float:
    return round(v, precision) + 0.0


def _within(a: float, b: float, tolerance: float, precision: int) -> bool:
    return abs(_canonical(a, precision) - _canonical(b, precision)) <= tolerance + 1e-12


def score(parsed, gold, answer_mode: str, tolerance: float = 0.0, *, instance_id: str = "",
          precision: int = 4) -> GradeResult:
    """Exact match after normalisation; decimals are compared at ``precision`` places."""
    if gold == LACK_CONDITION:
        if parsed == LACK_CONDITION:
            return GradeResult(instance_id, parsed, True)
        return GradeResult(instance_id, parsed, False, "parse" if parsed is None else "missing_lack_condition")
    if parsed is None:
        return GradeResult(instance_id, None, False, "parse")
    if parsed == LACK_CONDITION:
        return GradeResult(instance_id, parsed, False, "spurious_lack_condition")
    if answer_mode == "binary":
        ok = isinstance(parsed, str) and parsed == gold
    elif answer_mode == "numeric":
        ok = _is_number(parsed) and _within(parsed, gold, tolerance, precision)
    elif answer_mode == "bounds":
        ok = isinstance(parsed, tuple) and all(_within(p, g, tolerance, precision) for p, g in zip(parsed, gold))
    else:
        raise ValueError(f"unknown answer mode {answer_mode!r}")
    return GradeResult(instance_id, parsed, ok, "none" if ok else "wrong")


# --------------------------------------------------------------------------
# reports


@dataclass
class Report:
    per_run: list[dict[str, float]]
    counts: list[dict[str, int]]
    failures: dict[str, int] = field(default_factory=dict)

    @property
    def mean(self) -> dict[str, float]:
        out = {}
        for col in COLUMNS:
            vals = [r[col] for r in self.per_run if not math.isnan(r[col])]
            out[col] = sum(vals) / len(vals) if vals else math.nan
        return out

    @property
    def total(self) -> int:
        return sum(sum(c.values()) for c in self.counts)

    def to_dict(self) -> dict:
        def clean(d):
            return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

        return {
            "columns": list(COLUMNS),
            "per_run": [clean(r) for r in self.per_run],
            "mean_of_runs": clean(self.mean),
            "counts": self.counts,
            "failures": self.failures,
        }

    def format_table(self) -> str:
        def cell(v):
            return "  n/a" if math.isnan(v) else f"{100 * v:5.1f}"

        head = "run   " + " ".join(f"{c:>5}" for c in COLUMNS)
        rows = [head]
        for i, r in enumerate(self.per_run, 1):
            rows.append(f"{i:<5} " + " ".join(cell(r[c]) for c in COLUMNS))
        if len(self.per_run) > 1:
            rows.append("mean  " + " ".join(cell(self.mean[c]) for c in COLUMNS))
        rows.append("failures: " + ", ".join(f"{k}={v}" for k, v in sorted(self.failures.items())))
        return "\n".join(rows)


def aggregate(results: Sequence[GradeResult] | Sequence[Sequence[GradeResult]], metadata: Mapping[str, object]) -> Report:
    """Per-task accuracy and the unweighted average over tasks.

    ``results`` is one run or a list of runs. ``metadata`` maps each instance
    id to its task name (or to a record with a ``task`` entry).
    """
    runs = [list(results)] if not results or isinstance(results[0], GradeResult) else [list(r) for r in results]
    task_of = {}
    for key, meta in metadata.items():
        if isinstance(meta, Mapping):
            meta = meta.get("metadata", {}).get("task", meta.get("task"))
        task_of[key] = getattr(meta, "value", meta)
    orphans = sorted({r.instance_id for run in runs for r in run if r.instance_id not in task_of})
    if orphans:
        raise JoinError(orphans)
    per_run, counts = [], []
    failures: Counter = Counter()
    tasks = COLUMNS[:-1]
    for run in runs:
        right: Counter = Counter()
        seen: Counter = Counter()
        for r in run:
            task = task_of[r.instance_id]
            seen[task] += 1
            right[task] += r.correct
            failures[r.failure_kind] += 1
        acc = {t: (right[t] / seen[t] if seen[t] else math.nan) for t in tasks}
        present = [acc[t] for t in tasks if seen[t]]
        acc["Avg"] = sum(present) / len(present) if present else math.nan
        per_run.append(acc)
        counts.append({t: seen[t] for t in tasks})
    return Report(per_run, counts, dict(failures))
