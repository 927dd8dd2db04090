"""Evaluable symbolic formulas over probability references."""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from functools import cached_property

from .exceptions import InvalidArgumentError, MissingReferenceError


@dataclass(frozen=True, order=True)
class ProbRef:
    """P(targets | conditions); both are sorted ``(node, value)`` tuples."""

    targets: tuple[tuple[int, int], ...]
    conditions: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        t = tuple(sorted((int(a), int(b)) for a, b in self.targets))
        c = tuple(sorted((int(a), int(b)) for a, b in self.conditions))
        if not t:
            raise InvalidArgumentError("a probability reference needs at least one target")
        if {n for n, _ in t} & {n for n, _ in c}:
            raise InvalidArgumentError("targets and conditions must be disjoint")
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "conditions", c)

    @classmethod
    def of(cls, targets: Mapping[int, int], conditions: Mapping[int, int] | None = None) -> "ProbRef":
        return cls(tuple(dict(targets).items()), tuple((conditions or {}).items()))

    def format(self, labels: Sequence[str] | None = None) -> str:
        def side(pairs):
            return ", ".join(f"{labels[n] if labels else f'V{n}'}={v}" for n, v in pairs)

        if self.conditions:
            return f"P({side(self.targets)} | {side(self.conditions)})"
        return f"P({side(self.targets)})"

    def to_dict(self) -> dict:
        return {"targets": [list(p) for p in self.targets], "conditions": [list(p) for p in self.conditions]}

    @classmethod
    def from_dict(cls, data: dict) -> "ProbRef":
        return cls(tuple(tuple(p) for p in data["targets"]), tuple(tuple(p) for p in data.get("conditions", ())))


class Expr:
    """Base class; subclasses are frozen dataclasses."""

    op = ""

    def children(self) -> tuple["Expr", ...]:
        return ()

    def refs(self) -> list[ProbRef]:
        """Distinct references in post-order (left to right)."""
        return list(self._refs)

    @cached_property
    def _refs(self) -> tuple[ProbRef, ...]:
        seen: dict[ProbRef, None] = {}
        for node in self.walk():
            if isinstance(node, Ref):
                seen.setdefault(node.ref)
        return tuple(seen)

    def walk(self):
        for c in self.children():
            yield from c.walk()
        yield self

    def depth(self) -> int:
        return self._depth

    @cached_property
    def _depth(self) -> int:
        return 1 + max((c.depth() for c in self.children()), default=0)

    def evaluate(self, values: Mapping[ProbRef, float]):
        missing = [r for r in self._refs if r not in values]
        if missing:
            raise MissingReferenceError(missing)
        return self._eval(values)

    def _eval(self, values):  # pragma: no cover - abstract
        raise NotImplementedError

    def format(self, labels=None) -> str:  # pragma: no cover - abstract
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"op": self.op, "args": [c.to_dict() for c in self.children()]}

    # operator sugar keeps the solution builders readable
    def __add__(self, other):
        return Sum((self, _lift(other)))

    def __sub__(self, other):
        return Diff(self, _lift(other))

    def __rsub__(self, other):
        return Diff(_lift(other), self)

    def __mul__(self, other):
        return Prod((self, _lift(other)))

    def __truediv__(self, other):
        return Quot(self, _lift(other))


def _lift(x) -> Expr:
    return x if isinstance(x, Expr) else Const(float(x))


def _fmt_num(v: float) -> str:
    return f"{v:g}"


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float
    op = "const"

    def _eval(self, values):
        return self.value

    def format(self, labels=None):
        return _fmt_num(self.value)

    def to_dict(self):
        return {"op": self.op, "value": self.value}


@dataclass(frozen=True, eq=True)
class Ref(Expr):
    ref: ProbRef
    op = "ref"

    def _eval(self, values):
        return values[self.ref]

    def format(self, labels=None):
        return self.ref.format(labels)

    def to_dict(self):
        return {"op": self.op, **self.ref.to_dict()}


@dataclass(frozen=True, eq=True)
class Sum(Expr):
    terms: tuple[Expr, ...]
    op = "sum"

    def children(self):
        return self.terms

    def _eval(self, values):
        return sum(t._eval(values) for t in self.terms)

    def format(self, labels=None):
        return "(" + " + ".join(t.format(labels) for t in self.terms) + ")"


@dataclass(frozen=True, eq=True)
class Diff(Expr):
    left: Expr
    right: Expr
    op = "diff"

    def children(self):
        return (self.left, self.right)

    def _eval(self, values):
        return self.left._eval(values) - self.right._eval(values)

    def format(self, labels=None):
        return f"({self.left.format(labels)} - {self.right.format(labels)})"


@dataclass(frozen=True, eq=True)
class Prod(Expr):
    factors: tuple[Expr, ...]
    op = "prod"

    def children(self):
        return self.factors

    def _eval(self, values):
        out = 1.0
        for f in self.factors:
            out *= f._eval(values)
        return out

    def format(self, labels=None):
        return " * ".join(f.format(labels) for f in self.factors)


@dataclass(frozen=True, eq=True)
class Quot(Expr):
    num: Expr
    den: Expr
    op = "quot"

    def children(self):
        return (self.num, self.den)

    def _eval(self, values):
        den = self.den._eval(values)
        if den == 0:
            raise ZeroDivisionError("division by a zero probability")
        return self.num._eval(values) / den

    def format(self, labels=None):
        return f"{self.num.format(labels)} / {self.den.format(labels)}"


@dataclass(frozen=True, eq=True)
class Min(Expr):
    args: tuple[Expr, ...]
    op = "min"

    def children(self):
        return self.args

    def _eval(self, values):
        return min(a._eval(values) for a in self.args)

    def format(self, labels=None):
        return "min(" + ", ".join(a.format(labels) for a in self.args) + ")"


@dataclass(frozen=True, eq=True)
class Max(Expr):
    args: tuple[Expr, ...]
    op = "max"

    def children(self):
        return self.args

    def _eval(self, values):
        return max(a._eval(values) for a in self.args)

    def format(self, labels=None):
        return "max(" + ", ".join(a.format(labels) for a in self.args) + ")"


@dataclass(frozen=True, eq=True)
class Clamp(Expr):
    arg: Expr
    lo: float = 0.0
    hi: float = 1.0
    op = "clamp"

    def children(self):
        return (self.arg,)

    def _eval(self, values):
        return min(self.hi, max(self.lo, self.arg._eval(values)))

    def format(self, labels=None):
        return f"clamp({self.arg.format(labels)}, {_fmt_num(self.lo)}, {_fmt_num(self.hi)})"

    def to_dict(self):
        return {"op": self.op, "args": [self.arg.to_dict()], "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True, eq=True)
class Bounds(Expr):
    """Pair-valued root: (lower, upper)."""

    lower: Expr
    upper: Expr
    op = "bounds"

    def children(self):
        return (self.lower, self.upper)

    def _eval(self, values):
        return (self.lower._eval(values), self.upper._eval(values))

    def format(self, labels=None):
        return f"[{self.lower.format(labels)}, {self.upper.format(labels)}]"


def total(terms) -> Expr:
    terms = tuple(terms)
    return terms[0] if len(terms) == 1 else Sum(terms)


def product(factors) -> Expr:
    factors = tuple(factors)
    return factors[0] if len(factors) == 1 else Prod(factors)


def expr_from_dict(data: dict) -> Expr:
    op = data["op"]
    if op == "const":
        return Const(float(data["value"]))
    if op == "ref":
        return Ref(ProbRef.from_dict(data))
    args = tuple(expr_from_dict(a) for a in data.get("args", ()))
    if op == "sum":
        return Sum(args)
    if op == "prod":
        return Prod(args)
    if op == "min":
        return Min(args)
    if op == "max":
        return Max(args)
    if op == "diff":
        return Diff(*args)
    if op == "quot":
        return Quot(*args)
    if op == "bounds":
        return Bounds(*args)
    if op == "clamp":
        return Clamp(args[0], float(data["lo"]), float(data["hi"]))
    raise InvalidArgumentError(f"unknown expression op {op!r}")


@dataclass(frozen=True)
class Step:
    """One narrated intermediate of a solution; ``expr`` may be None for prose-only steps."""

    title: str
    expr: Expr | None = None

    def to_dict(self) -> dict:
        return {"title": self.title, "expr": None if self.expr is None else self.expr.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "Step":
        return cls(data["title"], None if data.get("expr") is None else expr_from_dict(data["expr"]))


@dataclass(frozen=True)
class SolutionExpr:
    expr: Expr
    steps: tuple[Step, ...] = ()

    def refs(self) -> list[ProbRef]:
        return self.expr.refs()

    def evaluate(self, values: Mapping[ProbRef, float]):
        return self.expr.evaluate(values)

    def to_dict(self) -> dict:
        return {"expr": self.expr.to_dict(), "steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, data: dict) -> "SolutionExpr":
        return cls(expr_from_dict(data["expr"]), tuple(Step.from_dict(s) for s in data.get("steps", ())))
