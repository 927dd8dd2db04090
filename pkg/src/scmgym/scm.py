"""Binary structural causal models with logistic (single-layer perceptron) mechanisms.

Node ``X`` equals 1 exactly when its exogenous uniform draw ``U_X`` is at most
``sigmoid(b_X + sum_i w_X^i * PA_X^i)``; the sign of each weight follows the
polarity of the corresponding edge.

Joint distributions are vectors of length ``2**n``; state ``s`` assigns node
``i`` the value ``(s >> i) & 1``.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from ._validation import check_assignment, check_disjoint, check_node, check_random_state, derive_seed
from .exceptions import CapacityError, InvalidArgumentError, UndefinedConditionalError
from .graph import LabeledDag, topological_order

SCHEMA_VERSION = "1.0"
DEFAULT_WEIGHT_RANGE = (0.5, 3.0)
DEFAULT_BIAS_RANGE = (-2.0, 2.0)
EXACT_NODE_LIMIT = 16
SAMPLE_CHUNK = 1 << 16


def sigmoid(z):
    # clipping keeps exp finite; the result saturates long before +-700
    return 1.0 / (1.0 + np.exp(-np.clip(z, -700.0, 700.0)))


@dataclass(frozen=True)
class Scm:
    graph: LabeledDag
    bias: tuple[float, ...]
    weights: tuple[tuple[float, ...], ...]  # per node, aligned with dag.parents(node)
    seed: int | None = None

    def __post_init__(self):
        dag = self.graph.dag
        if len(self.bias) != dag.node_count or len(self.weights) != dag.node_count:
            raise InvalidArgumentError("bias and weights need one entry per node")
        for v in range(dag.node_count):
            if len(self.weights[v]) != len(dag.parents(v)):
                raise InvalidArgumentError(f"node {v}: expected {len(dag.parents(v))} weights")
            for p, w in zip(dag.parents(v), self.weights[v]):
                if not math.isfinite(w) or w == 0 or (w > 0) != (self.graph.edge_polarity(p, v) > 0):
                    raise InvalidArgumentError(f"weight on edge {p}->{v} must be finite and match its polarity")
            if not math.isfinite(self.bias[v]):
                raise InvalidArgumentError(f"node {v}: bias must be finite")

    @property
    def node_count(self) -> int:
        return self.graph.dag.node_count

    @property
    def dag(self):
        return self.graph.dag

    def cpt_table(self, node: int) -> np.ndarray:
        """P(node=1 | parents) for every parent configuration.

        Entry ``j`` corresponds to parent ``k`` (in sorted parent order) taking
        value ``(j >> k) & 1``.
        """
        return self._cpt_tables[node]

    @cached_property
    def _cpt_tables(self) -> tuple[np.ndarray, ...]:
        return tuple(_cpt_table(self, v) for v in range(self.node_count))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "graph": self.graph.to_dict(),
            "bias": list(self.bias),
            "weights": [list(w) for w in self.weights],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scm":
        major = str(data.get("schema_version", "")).split(".")[0]
        if major != SCHEMA_VERSION.split(".")[0]:
            from .exceptions import SchemaError

            raise SchemaError(f"unsupported SCM schema_version {data.get('schema_version')!r}")
        return cls(
            LabeledDag.from_dict(data["graph"]),
            tuple(float(b) for b in data["bias"]),
            tuple(tuple(float(w) for w in ws) for ws in data["weights"]),
            data.get("seed"),
        )


def _cpt_table(scm: Scm, node: int) -> np.ndarray:
    k = len(scm.dag.parents(node))
    configs = _bit_matrix(k)
    logits = scm.bias[node] + configs @ np.asarray(scm.weights[node], dtype=float).reshape(k)
    table = sigmoid(logits)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def _bit_matrix(n: int) -> np.ndarray:
    states = np.arange(1 << n)
    bits = ((states[:, None] >> np.arange(n)) & 1).astype(np.int8)
    bits.setflags(write=False)
    return bits


def instantiate_scm(
    graph: LabeledDag,
    weight_range: tuple[float, float] = DEFAULT_WEIGHT_RANGE,
    seed=0,
    *,
    bias_range: tuple[float, float] = DEFAULT_BIAS_RANGE,
) -> Scm:
    lo, hi = weight_range
    if not 0 < lo < hi:
        raise InvalidArgumentError(f"weight_range must satisfy 0 < lo < hi, got {weight_range}")
    blo, bhi = bias_range
    if not blo <= bhi:
        raise InvalidArgumentError(f"bias_range must satisfy lo <= hi, got {bias_range}")
    rng = check_random_state(seed)
    dag = graph.dag
    bias = tuple(float(b) for b in rng.uniform(blo, bhi, dag.node_count))
    weights = []
    for v in range(dag.node_count):
        ps = dag.parents(v)
        mags = rng.uniform(lo, hi, len(ps))
        weights.append(tuple(float(m * graph.edge_polarity(p, v)) for p, m in zip(ps, mags)))
    return Scm(graph, bias, tuple(weights), seed if isinstance(seed, int) else None)


def cpt(scm: Scm, node: int, parent_assignment) -> float:
    """P(node = 1 | parents = parent_assignment), parents in sorted index order."""
    node = check_node(node, scm.node_count)
    pa = list(parent_assignment)
    if len(pa) != len(scm.dag.parents(node)):
        raise InvalidArgumentError(
            f"node {node} has {len(scm.dag.parents(node))} parents, got an assignment of length {len(pa)}"
        )
    z = scm.bias[node] + sum(w * int(x) for w, x in zip(scm.weights[node], pa))
    return 1.0 / (1.0 + math.exp(-z))


@dataclass(frozen=True, eq=False)
class JointDistribution:
    node_count: int
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.shape != (1 << self.node_count,):
            raise InvalidArgumentError(f"expected {1 << self.node_count} probabilities, got shape {p.shape}")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @property
    def bits(self) -> np.ndarray:
        return _bit_matrix(self.node_count)

    @cached_property
    def _cube(self) -> np.ndarray:
        # axis k holds node n-1-k, because node i is bit i of the state index
        return self.probabilities.reshape((2,) * self.node_count)

    def mask(self, assignment: Mapping[int, int]) -> np.ndarray:
        bits = self.bits
        m = np.ones(len(self.probabilities), dtype=bool)
        for node, value in assignment.items():
            m &= bits[:, node] == value
        return m

    def prob(self, assignment: Mapping[int, int]) -> float:
        n = self.node_count
        index = [slice(None)] * n
        for node, value in assignment.items():
            index[n - 1 - node] = value
        return float(self._cube[tuple(index)].sum())

    @classmethod
    def from_samples(cls, rows: np.ndarray) -> "JointDistribution":
        rows = np.asarray(rows, dtype=np.int64)
        n = rows.shape[1]
        index = rows @ (1 << np.arange(n))
        counts = np.bincount(index, minlength=1 << n)
        return cls(n, counts / counts.sum())


def exact_joint(scm: Scm, *, do: Mapping[int, int] | None = None, max_nodes: int = EXACT_NODE_LIMIT) -> JointDistribution:
    """Joint law by enumeration; ``do`` replaces factors with point masses."""
    n = scm.node_count
    if n > max_nodes:
        raise CapacityError(f"{n} nodes exceed the exact-inference limit of {max_nodes}; use sample() instead")
    do = check_assignment(do, n, "do")
    bits = _bit_matrix(n)
    probs = np.ones(1 << n)
    for v in range(n):
        if v in do:
            probs *= bits[:, v] == do[v]
            continue
        ps = scm.dag.parents(v)
        index = np.zeros(1 << n, dtype=np.int64)
        for k, p in enumerate(ps):
            index |= bits[:, p].astype(np.int64) << k
        p1 = scm.cpt_table(v)[index]
        probs *= np.where(bits[:, v] == 1, p1, 1.0 - p1)
    return JointDistribution(n, probs)


def sample(scm: Scm, count: int, seed=0, *, jobs: int = 1) -> np.ndarray:
    """Ancestral sampling; returns a ``(count, n)`` array of 0/1 values.

    Rows are produced in fixed-size chunks, each with its own derived seed,
    so the output does not depend on ``jobs``.
    """
    if count < 1:
        raise InvalidArgumentError("count must be positive")
    base = int(seed) if seed is not None else 0
    chunks = [(i, min(SAMPLE_CHUNK, count - i * SAMPLE_CHUNK)) for i in range((count + SAMPLE_CHUNK - 1) // SAMPLE_CHUNK)]
    order = topological_order(scm.dag)

    def run(chunk):
        i, size = chunk
        rng = np.random.default_rng(derive_seed(base, i))
        u = rng.random((size, scm.node_count))
        out = np.zeros((size, scm.node_count), dtype=np.uint8)
        for v in order:
            index = np.zeros(size, dtype=np.int64)
            for k, p in enumerate(scm.dag.parents(v)):
                index |= out[:, p].astype(np.int64) << k
            out[:, v] = u[:, v] <= scm.cpt_table(v)[index]
        return out

    if jobs > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts, axis=0)


def query(joint: JointDistribution, targets: Mapping[int, int], conditions: Mapping[int, int] | None = None) -> float:
    """P(targets | conditions) by summing joint cells."""
    targets = check_assignment(targets, joint.node_count, "targets")
    conditions = check_assignment(conditions, joint.node_count, "conditions")
    check_disjoint(targets=targets, conditions=conditions)
    if not conditions:
        return joint.prob(targets)
    denom = joint.prob(conditions)
    if denom <= 0.0:
        raise UndefinedConditionalError(f"P({conditions}) is zero")
    return joint.prob({**targets, **conditions}) / denom
