"""Typed configuration shared by every pipeline stage."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError
from .graph import SemanticsMode
from .oracle import ALL_TASKS, Task

ENV_LLM_URL = "GYM_LLM_URL"
ENV_LLM_KEY = "GYM_LLM_KEY"


@dataclass
class GymConfig:
    seed: int = 0
    tasks: list[str] = field(default_factory=lambda: [t.value for t in ALL_TASKS])
    per_task: int = 2500

    # graphs and mechanisms
    min_nodes: int = 3
    max_nodes: int = 10
    edge_density: float = 0.3
    max_in_degree: int = 4
    weight_range: list[float] = field(default_factory=lambda: [0.5, 3.0])
    bias_range: list[float] = field(default_factory=lambda: [-2.0, 2.0])
    mode_mix: dict[str, float] = field(default_factory=lambda: {"Real": 1.0, "Random": 1.0, "Fake": 1.0})
    vocabulary: str | None = None

    # question construction
    render_precision: int = 4
    answer_precision: int = 4
    answer_mode: str = "binary"  # for ATE/CDE/ETT/NDE/NIE; PN/PS always use bounds
    sign_margin: float = 0.02
    no_effect_fraction: float = 0.0
    max_probability_count: int = 12
    max_expression_depth: int = 12
    retry_cap: int = 200
    probability_source: str = "exact"  # or "sampled"
    sample_count: int = 1_000_000
    counterfactual_budget: int = 10_000_000

    # stress sets
    stress_per_task: int = 100
    deconfounding_param_draws: int = 50
    deconfounding_retry_cap: int = 2000
    redundant_count: int = 2
    removed_count: int = 2
    rewriter: str = "rule"  # identity | rule | llm
    rewrite_attempts: int = 3

    # adapters and reward
    allow_fallback: bool = True
    negative_length_multiple: float = 3.0
    reward_answer: float = 1.0
    reward_think: float = 0.1
    reward_json: float = 0.1
    grade_tolerance: float = 0.0

    # LLM endpoint (url and key come from the environment only)
    llm_model: str = "gpt-4o-mini"
    llm_temperature: float = 0.7
    llm_timeout: float = 60.0
    llm_max_in_flight: int = 4
    llm_retries: int = 3
    llm_verbose: bool = False

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------------
    def validate(self) -> None:
        problems = []

        def need(cond, name, msg):
            if not cond:
                problems.append(f"{name}: {msg} (got {getattr(self, name)!r})")

        known = {t.value for t in ALL_TASKS}
        need(bool(self.tasks) and set(self.tasks) <= known and len(set(self.tasks)) == len(self.tasks),
             "tasks", f"must be distinct entries of {sorted(known)}")
        need(isinstance(self.per_task, int) and self.per_task >= 1, "per_task", "must be a positive integer")
        need(isinstance(self.min_nodes, int) and self.min_nodes >= 2, "min_nodes", "must be an integer >= 2")
        need(isinstance(self.max_nodes, int) and self.min_nodes <= self.max_nodes <= 16, "max_nodes",
             "must lie in [min_nodes, 16]")
        need(0.0 <= self.edge_density <= 1.0, "edge_density", "must lie in [0, 1]")
        need(isinstance(self.max_in_degree, int) and self.max_in_degree >= 1, "max_in_degree", "must be >= 1")
        need(len(self.weight_range) == 2 and 0 < self.weight_range[0] < self.weight_range[1], "weight_range",
             "must be [lo, hi] with 0 < lo < hi")
        need(len(self.bias_range) == 2 and self.bias_range[0] <= self.bias_range[1], "bias_range",
             "must be [lo, hi] with lo <= hi")
        modes = {m.value for m in SemanticsMode}
        need(bool(self.mode_mix) and set(self.mode_mix) <= modes and all(w >= 0 for w in self.mode_mix.values())
             and sum(self.mode_mix.values()) > 0, "mode_mix", f"must map a subset of {sorted(modes)} to non-negative weights")
        need(isinstance(self.render_precision, int) and 1 <= self.render_precision <= 10, "render_precision", "must be in [1, 10]")
        need(isinstance(self.answer_precision, int) and 1 <= self.answer_precision <= 10, "answer_precision", "must be in [1, 10]")
        need(self.answer_mode in ("binary", "numeric"), "answer_mode", "must be 'binary' or 'numeric'")
        need(0.0 <= self.sign_margin < 1.0, "sign_margin", "must lie in [0, 1)")
        need(0.0 <= self.no_effect_fraction <= 1.0, "no_effect_fraction", "must lie in [0, 1]")
        need(isinstance(self.max_probability_count, int) and self.max_probability_count >= 2, "max_probability_count", "must be >= 2")
        need(isinstance(self.max_expression_depth, int) and self.max_expression_depth >= 3, "max_expression_depth", "must be >= 3")
        need(isinstance(self.retry_cap, int) and self.retry_cap >= 1, "retry_cap", "must be >= 1")
        need(self.probability_source in ("exact", "sampled"), "probability_source", "must be 'exact' or 'sampled'")
        need(isinstance(self.sample_count, int) and self.sample_count >= 1, "sample_count", "must be >= 1")
        need(isinstance(self.counterfactual_budget, int) and self.counterfactual_budget >= 1, "counterfactual_budget", "must be >= 1")
        need(isinstance(self.stress_per_task, int) and self.stress_per_task >= 1, "stress_per_task", "must be >= 1")
        need(isinstance(self.deconfounding_param_draws, int) and self.deconfounding_param_draws >= 1,
             "deconfounding_param_draws", "must be >= 1")
        need(isinstance(self.deconfounding_retry_cap, int) and self.deconfounding_retry_cap >= 1,
             "deconfounding_retry_cap", "must be >= 1")
        need(isinstance(self.redundant_count, int) and self.redundant_count >= 1, "redundant_count", "must be >= 1")
        need(isinstance(self.removed_count, int) and self.removed_count >= 1, "removed_count", "must be >= 1")
        need(self.rewriter in ("identity", "rule", "llm"), "rewriter", "must be identity, rule or llm")
        need(isinstance(self.rewrite_attempts, int) and self.rewrite_attempts >= 1, "rewrite_attempts", "must be >= 1")
        need(self.negative_length_multiple > 1.0, "negative_length_multiple", "must exceed 1")
        for name in ("reward_answer", "reward_think", "reward_json", "grade_tolerance"):
            need(getattr(self, name) >= 0, name, "must be non-negative")
        need(0.0 <= self.llm_temperature <= 2.0, "llm_temperature", "must lie in [0, 2]")
        need(self.llm_timeout > 0, "llm_timeout", "must be positive")
        need(isinstance(self.llm_max_in_flight, int) and self.llm_max_in_flight >= 1, "llm_max_in_flight", "must be >= 1")
        need(isinstance(self.llm_retries, int) and self.llm_retries >= 0, "llm_retries", "must be >= 0")
        if problems:
            raise ConfigError(problems)

    # ------------------------------------------------------------------
    @property
    def task_list(self) -> list[Task]:
        return [Task(t) for t in self.tasks]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GymConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError([f"{k}: unknown configuration key" for k in unknown])
        defaults = cls()
        problems = []
        kwargs = {}
        for key, value in data.items():
            expected = type(getattr(defaults, key))
            if getattr(defaults, key) is None or value is None:
                kwargs[key] = value
            elif expected is float and isinstance(value, (int, float)) and not isinstance(value, bool):
                kwargs[key] = float(value)
            elif expected is int and isinstance(value, bool):
                problems.append(f"{key}: expected int, got bool")
            elif not isinstance(value, expected):
                problems.append(f"{key}: expected {expected.__name__}, got {type(value).__name__}")
            else:
                kwargs[key] = value
        if problems:
            raise ConfigError(problems)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "GymConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: not valid JSON ({exc})"]) from None
        if not isinstance(data, dict):
            raise ConfigError([f"{path}: top level must be an object"])
        return cls.from_dict(data)

    def replace(self, **changes) -> "GymConfig":
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @staticmethod
    def llm_endpoint() -> tuple[str | None, str | None]:
        return os.environ.get(ENV_LLM_URL), os.environ.get(ENV_LLM_KEY)
