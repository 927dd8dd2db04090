"""Exception hierarchy shared by every module."""


class GymError(Exception):
    """Base class for all errors raised by scmgym."""


class InvalidArgumentError(GymError, ValueError):
    pass


class CycleError(GymError, ValueError):
    """A graph that should be acyclic contains a cycle."""

    def __init__(self, edge):
        self.edge = tuple(edge)
        super().__init__(f"graph contains a cycle through edge {self.edge[0]} -> {self.edge[1]}")


class CapacityError(GymError):
    """Exact computation would exceed the configured size limit."""


class UndefinedConditionalError(GymError, ZeroDivisionError):
    """Conditioning event has probability zero."""


class UnidentifiableError(GymError):
    pass


class NotApplicableError(GymError):
    """The requested estimand does not apply to this graph (e.g. no mediators)."""


class SemanticsError(GymError):
    """Node semantics could not be assigned under the requested mode."""


class MissingReferenceError(GymError, KeyError):
    """A solution references probabilities absent from the given statements."""

    def __init__(self, missing):
        self.missing = frozenset(missing)
        super().__init__(f"{len(self.missing)} unresolved probability reference(s)")

    def __str__(self):
        return self.args[0]


class RegenerateInstance(GymError):
    """Signal: the current draw is degenerate and a fresh one should be tried."""


class GenerationError(GymError):
    """The retry cap was exhausted while generating an instance."""


class SkipInstance(GymError):
    """A transform cannot be applied to this instance."""


class RewriterError(GymError):
    """Transport-level failure talking to a text rewriter (retriable)."""


class ConfigError(GymError, ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


class SchemaError(GymError):
    pass


class JoinError(GymError):
    def __init__(self, orphans):
        self.orphans = sorted(orphans)
        shown = ", ".join(self.orphans[:20])
        more = "" if len(self.orphans) <= 20 else f" (+{len(self.orphans) - 20} more)"
        super().__init__(f"responses reference unknown instance ids: {shown}{more}")
