"""Input validation helpers."""
from __future__ import annotations

from collections.abc import Iterable
from numbers import Integral

import numpy as np

from .exceptions import InvalidArgumentError

SeedLike = "int | tuple[int, ...] | np.random.SeedSequence | np.random.Generator | None"


def check_random_state(seed) -> np.random.Generator:
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Integers, tuples of non-negative integers and ``SeedSequence`` objects
    give a fresh, reproducible stream; an existing ``Generator`` is passed
    through untouched.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    if isinstance(seed, (tuple, list)) and seed and all(isinstance(s, Integral) and s >= 0 for s in seed):
        return np.random.default_rng(np.random.SeedSequence([int(s) for s in seed]))
    raise InvalidArgumentError(f"cannot build a random stream from {seed!r}")


def derive_seed(*entropy: int) -> np.random.SeedSequence:
    """Seed sequence for one job, derived from (base_seed, index, ...)."""
    return np.random.SeedSequence([int(e) for e in entropy])


def check_node(node, node_count: int, name: str = "node") -> int:
    if not isinstance(node, Integral) or not 0 <= node < node_count:
        raise InvalidArgumentError(f"{name} must be a node index in [0, {node_count}), got {node!r}")
    return int(node)


def check_node_set(nodes: Iterable[int], node_count: int, name: str = "node set") -> frozenset[int]:
    return frozenset(check_node(n, node_count, name) for n in nodes)


def check_binary(value, name: str = "value") -> int:
    if value not in (0, 1):
        raise InvalidArgumentError(f"{name} must be 0 or 1, got {value!r}")
    return int(value)


def check_assignment(assignment, node_count: int, name: str = "assignment") -> dict[int, int]:
    if assignment is None:
        return {}
    return {check_node(k, node_count, name): check_binary(v, f"{name}[{k}]") for k, v in dict(assignment).items()}


def check_disjoint(**sets) -> None:
    names = list(sets)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            common = set(sets[a]) & set(sets[b])
            if common:
                raise InvalidArgumentError(f"{a} and {b} overlap on {sorted(common)}")
