"""Random DAG backbones and node semantics (Real / Random / Fake labelling)."""
from __future__ import annotations

import enum
import heapq
import string
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from ._validation import check_random_state
from .exceptions import CycleError, InvalidArgumentError, SemanticsError

DEFAULT_MAX_NODES = 10
DEFAULT_EDGE_DENSITY = 0.3
DEFAULT_MAX_IN_DEGREE = 4


class SemanticsMode(str, enum.Enum):
    REAL = "Real"
    RANDOM = "Random"
    FAKE = "Fake"


@dataclass(frozen=True)
class Dag:
    """Directed graph over nodes ``0..node_count-1`` with a sorted edge list."""

    node_count: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.node_count < 1:
            raise InvalidArgumentError("a graph needs at least one node")
        edges = tuple(sorted((int(a), int(b)) for a, b in self.edges))
        for a, b in edges:
            if not (0 <= a < self.node_count and 0 <= b < self.node_count):
                raise InvalidArgumentError(f"edge ({a}, {b}) references a missing node")
            if a == b:
                raise InvalidArgumentError(f"self-loop on node {a}")
        if len(set(edges)) != len(edges):
            raise InvalidArgumentError("duplicate edges")
        object.__setattr__(self, "edges", edges)

    @cached_property
    def parent_lists(self) -> tuple[tuple[int, ...], ...]:
        parents = [[] for _ in range(self.node_count)]
        for a, b in self.edges:
            parents[b].append(a)
        return tuple(tuple(sorted(p)) for p in parents)

    @cached_property
    def child_lists(self) -> tuple[tuple[int, ...], ...]:
        children = [[] for _ in range(self.node_count)]
        for a, b in self.edges:
            children[a].append(b)
        return tuple(tuple(sorted(c)) for c in children)

    def parents(self, node: int) -> tuple[int, ...]:
        return self.parent_lists[node]

    def children(self, node: int) -> tuple[int, ...]:
        return self.child_lists[node]

    def without_outgoing(self, nodes) -> "Dag":
        """Copy of the graph with every edge leaving ``nodes`` removed."""
        cut = set(nodes)
        return Dag(self.node_count, tuple(e for e in self.edges if e[0] not in cut))

    def to_dict(self) -> dict:
        return {"node_count": self.node_count, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, data: dict) -> "Dag":
        dag = cls(int(data["node_count"]), tuple(tuple(e) for e in data["edges"]))
        topological_order(dag)
        return dag


@dataclass(frozen=True)
class LabeledDag:
    dag: Dag
    mode: SemanticsMode
    labels: tuple[str, ...]
    polarity: tuple[int, ...] = field(default=())  # +1 / -1, aligned with dag.edges

    def __post_init__(self):
        object.__setattr__(self, "mode", SemanticsMode(self.mode))
        if len(self.labels) != self.dag.node_count:
            raise InvalidArgumentError("one label per node is required")
        if len(set(self.labels)) != len(self.labels):
            raise InvalidArgumentError("labels must be unique")
        if len(self.polarity) != len(self.dag.edges):
            raise InvalidArgumentError("polarity must be defined for every edge")
        if any(p not in (1, -1) for p in self.polarity):
            raise InvalidArgumentError("polarity entries must be +1 or -1")

    @property
    def node_count(self) -> int:
        return self.dag.node_count

    def edge_polarity(self, parent: int, child: int) -> int:
        return self.polarity[self.dag.edges.index((parent, child))]

    def to_dict(self) -> dict:
        return {
            **self.dag.to_dict(),
            "mode": self.mode.value,
            "labels": list(self.labels),
            "polarity": list(self.polarity),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LabeledDag":
        return cls(Dag.from_dict(data), SemanticsMode(data["mode"]), tuple(data["labels"]), tuple(data["polarity"]))


def generate_dag(
    node_count: int,
    edge_density: float = DEFAULT_EDGE_DENSITY,
    seed=0,
    *,
    max_nodes: int = DEFAULT_MAX_NODES,
    max_in_degree: int | None = DEFAULT_MAX_IN_DEGREE,
) -> Dag:
    """Sample a random DAG.

    Nodes are put in a random order and each forward pair gets an edge with
    probability ``edge_density``; forward-only edges make the result acyclic
    by construction. Children with more than ``max_in_degree`` parents keep
    the parents with the highest random priority.
    """
    if not isinstance(node_count, (int, np.integer)) or node_count < 1 or node_count > max_nodes:
        raise InvalidArgumentError(f"node_count must be in [1, {max_nodes}], got {node_count!r}")
    if not 0.0 <= edge_density <= 1.0:
        raise InvalidArgumentError(f"edge_density must lie in [0, 1], got {edge_density}")
    rng = check_random_state(seed)
    n = int(node_count)
    order = rng.permutation(n)
    draws = rng.random((n, n))
    priority = rng.random((n, n))
    parents: dict[int, list[tuple[float, int]]] = {}
    for a in range(n):
        for b in range(a + 1, n):
            if draws[a, b] < edge_density:
                parents.setdefault(int(order[b]), []).append((priority[a, b], int(order[a])))
    edges = []
    for child, cand in parents.items():
        if max_in_degree is not None and len(cand) > max_in_degree:
            cand = sorted(cand, reverse=True)[:max_in_degree]
        edges.extend((p, child) for _, p in cand)
    return Dag(n, tuple(edges))


def topological_order(dag: Dag) -> list[int]:
    """Kahn's algorithm with lowest-index-first tie-breaking."""
    indegree = [len(dag.parents(v)) for v in range(dag.node_count)]
    ready = [v for v in range(dag.node_count) if indegree[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for c in dag.children(v):
            indegree[c] -= 1
            if indegree[c] == 0:
                heapq.heappush(ready, c)
    if len(order) < dag.node_count:
        raise CycleError(_edge_on_cycle(dag, set(range(dag.node_count)) - set(order)))
    return order


def _edge_on_cycle(dag: Dag, remaining: set[int]) -> tuple[int, int]:
    # every remaining node has a remaining parent; walking parents must revisit a node
    v = min(remaining)
    seen: dict[int, int] = {}
    path = []
    while v not in seen:
        seen[v] = len(path)
        path.append(v)
        v = next(p for p in dag.parents(v) if p in remaining)
    cycle = path[seen[v]:]
    # path walks child -> parent, so consecutive entries form parent edges
    return (cycle[1], cycle[0]) if len(cycle) > 1 else (cycle[0], cycle[0])


# --------------------------------------------------------------------------
# vocabulary


@dataclass(frozen=True)
class Vocabulary:
    """Variable names plus known cause -> effect relations with their sign."""

    names: tuple[str, ...]
    relations: dict[tuple[str, str], int]

    @cached_property
    def _out(self) -> dict[str, set[str]]:
        out = {n: set() for n in self.names}
        for cause, effect in self.relations:
            out[cause].add(effect)
        return out

    @cached_property
    def _in(self) -> dict[str, set[str]]:
        inc = {n: set() for n in self.names}
        for cause, effect in self.relations:
            inc[effect].add(cause)
        return inc

    def __len__(self) -> int:
        return len(self.names)


def parse_vocabulary(text: str) -> Vocabulary:
    """Parse the line-oriented vocabulary format.

    Each non-comment line is either ``name`` or
    ``name<TAB>parent_name<TAB>+|-`` declaring that ``parent_name`` causes
    ``name`` with the given sign.
    """
    names: dict[str, None] = {}
    relations: dict[tuple[str, str], int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) == 1:
            names.setdefault(parts[0])
        elif len(parts) == 3 and parts[2] in ("+", "-"):
            child, parent, sign = parts
            if child == parent:
                raise InvalidArgumentError(f"vocabulary line {lineno}: self relation")
            names.setdefault(parent)
            names.setdefault(child)
            relations[(parent, child)] = 1 if sign == "+" else -1
        else:
            raise InvalidArgumentError(f"vocabulary line {lineno}: expected 'name' or 'name<TAB>parent<TAB>+|-'")
    return Vocabulary(tuple(names), relations)


def load_vocabulary(path: str | Path | None = None) -> Vocabulary:
    """Load a vocabulary file; ``None`` loads the packaged default."""
    if path is None:
        text = resources.files("scmgym").joinpath("data/vocabulary.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_vocabulary(text)


def sample_vocabulary_dag(
    vocabulary: Vocabulary,
    node_count: int,
    seed=0,
    *,
    max_in_degree: int | None = DEFAULT_MAX_IN_DEGREE,
) -> Dag:
    """Unlabelled backbone of :func:`sample_real_graph`."""
    return sample_real_graph(vocabulary, node_count, seed, max_in_degree=max_in_degree).dag


def sample_real_graph(
    vocabulary: Vocabulary,
    node_count: int,
    seed=0,
    *,
    max_in_degree: int | None = DEFAULT_MAX_IN_DEGREE,
) -> LabeledDag:
    """Grow a connected set of related names and return its relation subgraph.

    Every edge is a vocabulary relation and carries its polarity, so the
    result is a valid Real-mode graph. It may have fewer than ``node_count``
    nodes when the chosen component is small.
    """
    rng = check_random_state(seed)
    neighbours = {n: sorted(vocabulary._out[n] | vocabulary._in[n]) for n in vocabulary.names}
    related = [n for n in vocabulary.names if neighbours[n]]
    if not related:
        raise SemanticsError("vocabulary declares no relations")
    chosen = [related[rng.integers(len(related))]]
    frontier = set(neighbours[chosen[0]])
    while len(chosen) < node_count and frontier:
        pool = sorted(frontier)
        pick = pool[rng.integers(len(pool))]
        chosen.append(pick)
        frontier |= set(neighbours[pick])
        frontier -= set(chosen)
    perm = rng.permutation(len(chosen))
    index = {name: int(perm[i]) for i, name in enumerate(chosen)}
    parents: dict[int, list[int]] = {}
    for (cause, effect) in vocabulary.relations:
        if cause in index and effect in index:
            parents.setdefault(index[effect], []).append(index[cause])
    edges = []
    for child, ps in parents.items():
        ps = sorted(ps)
        if max_in_degree is not None and len(ps) > max_in_degree:
            ps = sorted(rng.choice(ps, size=max_in_degree, replace=False).tolist())
        edges.extend((p, child) for p in ps)
    dag = Dag(len(chosen), tuple(edges))
    names = [""] * len(chosen)
    for name, i in index.items():
        names[i] = name
    polarity = tuple(vocabulary.relations[(names[a], names[b])] for a, b in dag.edges)
    return LabeledDag(dag, SemanticsMode.REAL, tuple(names), polarity)


# --------------------------------------------------------------------------
# semantics


def assign_semantics(
    dag: Dag,
    mode: SemanticsMode | str,
    vocabulary: Vocabulary | None = None,
    seed=0,
    *,
    search_budget: int = 200_000,
) -> LabeledDag:
    """Attach labels and edge polarities to ``dag``.

    Real mode searches for an injective naming under which every edge is a
    relation stated in the vocabulary and takes polarities from it. Random
    mode draws vocabulary names with random polarities. Fake mode invents
    distinct four-letter lowercase names.
    """
    mode = SemanticsMode(mode)
    rng = check_random_state(seed)
    n = dag.node_count
    if mode is SemanticsMode.FAKE:
        labels: list[str] = []
        taken: set[str] = set()
        letters = np.array(list(string.ascii_lowercase))
        while len(labels) < n:
            word = "".join(rng.choice(letters, 4))
            if word not in taken:
                taken.add(word)
                labels.append(word)
        polarity = tuple(int(s) for s in rng.choice([1, -1], len(dag.edges)))
        return LabeledDag(dag, mode, tuple(labels), polarity)

    if vocabulary is None or len(vocabulary) < n:
        have = 0 if vocabulary is None else len(vocabulary)
        raise InvalidArgumentError(f"{mode.value} mode needs a vocabulary of at least {n} names, got {have}")

    if mode is SemanticsMode.RANDOM:
        picks = rng.choice(len(vocabulary.names), size=n, replace=False)
        labels = tuple(vocabulary.names[i] for i in picks)
        polarity = tuple(int(s) for s in rng.choice([1, -1], len(dag.edges)))
        return LabeledDag(dag, mode, labels, polarity)

    names = _embed(dag, vocabulary, rng, search_budget)
    polarity = tuple(vocabulary.relations[(names[a], names[b])] for a, b in dag.edges)
    return LabeledDag(dag, mode, tuple(names), polarity)


def _embed(dag: Dag, vocab: Vocabulary, rng: np.random.Generator, budget: int) -> list[str]:
    order = topological_order(dag)
    out_deg = [len(dag.children(v)) for v in range(dag.node_count)]
    in_deg = [len(dag.parents(v)) for v in range(dag.node_count)]
    shuffled = [vocab.names[i] for i in rng.permutation(len(vocab.names))]
    assigned: dict[int, str] = {}
    used: set[str] = set()
    steps = 0

    def candidates(v: int):
        ps = dag.parents(v)
        if ps:
            pool = set.intersection(*(vocab._out[assigned[p]] for p in ps))
            pool = [c for c in shuffled if c in pool]
        else:
            pool = shuffled
        return [
            c for c in pool
            if c not in used and len(vocab._out[c]) >= out_deg[v] and len(vocab._in[c]) >= in_deg[v]
        ]

    def search(pos: int) -> bool:
        nonlocal steps
        if pos == len(order):
            return True
        v = order[pos]
        for c in candidates(v):
            steps += 1
            if steps > budget:
                return False
            assigned[v] = c
            used.add(c)
            if search(pos + 1):
                return True
            del assigned[v]
            used.discard(c)
        return False

    if not search(0):
        raise SemanticsError("no coherent vocabulary naming found for this graph")
    return [assigned[v] for v in range(dag.node_count)]
