"""Simulated distributed summary aggregation with record-level accounting.

Three protocols over partitioned weighted data:

* flat: every node ships one local summary (common step) to a coordinator;
* balanced flat: per-node steps enlarged on heavy shards so no single node
  dominates the traffic;
* tree: binary-tree all-reduce where each node re-summarizes its local data
  plus its children's summaries with a height-scaled step, and the root's
  summary is the final answer.

Every run begins with a scalar weight-sum round (the global weight is not
free knowledge); its records are ledgered under the "preround" phase, apart
from the summary traffic. Per-node results depend only on (master seed, node
id), never on execution interleaving: node j always draws from the derived
stream with child id j.

Step-size formulas use natural log for the confidence term log(2/delta) and
base-2 log for the tree-size term log(k).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .bucketizer import QuantileSummary, build, empty_summary, merge_summaries
from .core import CommLedger, RandomSource, WeightedDataset, coalesce, derive_stream

__all__ = [
    "COORDINATOR",
    "Partitioning",
    "TreeTopology",
    "NodeTrace",
    "ProtocolResult",
    "allreduce_sum",
    "subtree_sums",
    "flat_protocol",
    "flat_protocol_balanced",
    "tree_protocol",
    "balanced_tree_over_shards",
]

COORDINATOR = -1


@dataclass(frozen=True)
class Partitioning:
    """Dataset split across k nodes; shard j lives on node j."""

    shards: tuple[WeightedDataset, ...]

    def __post_init__(self):
        if len(self.shards) < 1:
            raise ValueError("a partitioning needs at least one shard")

    @property
    def k(self) -> int:
        return len(self.shards)

    @property
    def global_weight(self) -> float:
        return math.fsum(shard.total_weight for shard in self.shards)

    def combined(self) -> WeightedDataset:
        """Union of all shards, coalesced — the rank oracle's ground truth."""
        pairs: list[tuple[float, float]] = []
        for shard in self.shards:
            pairs.extend(zip(shard.values.tolist(), shard.weights.tolist()))
        return coalesce(pairs)


class TreeTopology:
    """Binary tree of nodes, each with an optional local dataset.

    Every node has 0 or 2 children. A node's level is its height: 0 for
    leaves, 1 + max(children levels) otherwise. Internal nodes may hold no
    data (leaf-data-only deployments).
    """

    def __init__(
        self,
        parents: Mapping[int, Optional[int]],
        datasets: Optional[Mapping[int, WeightedDataset]] = None,
    ):
        self.parents: dict[int, Optional[int]] = {int(n): (None if p is None else int(p)) for n, p in parents.items()}
        self.datasets: dict[int, WeightedDataset] = dict(datasets or {})
        roots = [n for n, p in self.parents.items() if p is None]
        if len(roots) != 1:
            raise ValueError(f"topology must have exactly one root, found {len(roots)}")
        self.root: int = roots[0]
        self.children: dict[int, list[int]] = {n: [] for n in self.parents}
        for n, p in self.parents.items():
            if p is not None:
                if p not in self.parents:
                    raise ValueError(f"node {n} references unknown parent {p}")
                self.children[p].append(n)
        for n, kids in self.children.items():
            if len(kids) not in (0, 2):
                raise ValueError(f"node {n} has {len(kids)} children; binary tree needs 0 or 2")
            kids.sort()
        for n in self.datasets:
            if n not in self.parents:
                raise ValueError(f"dataset attached to unknown node {n}")
        self.levels: dict[int, int] = {}
        for n in self._post_order(self.root, set()):
            kids = self.children[n]
            self.levels[n] = 0 if not kids else 1 + max(self.levels[c] for c in kids)
        if len(self.levels) != len(self.parents):
            raise ValueError("topology contains nodes unreachable from the root")

    def _post_order(self, node: int, seen: set[int]) -> list[int]:
        if node in seen:
            raise ValueError("topology contains a cycle")
        seen.add(node)
        order: list[int] = []
        for child in self.children[node]:
            order.extend(self._post_order(child, seen))
        order.append(node)
        return order

    def nodes_bottom_up(self) -> list[int]:
        return self._post_order(self.root, set())

    @property
    def node_ids(self) -> list[int]:
        return sorted(self.parents)

    def dataset_of(self, node: int) -> Optional[WeightedDataset]:
        ds = self.datasets.get(node)
        if ds is not None and len(ds) == 0:
            return None
        return ds

    @property
    def data_node_count(self) -> int:
        return sum(1 for n in self.parents if self.dataset_of(n) is not None)


@dataclass(frozen=True)
class NodeTrace:
    """What one tree node saw and produced: its combined input (local data
    plus child summaries), its summary, the step it used, and its level."""

    summary: QuantileSummary
    combined: Optional[WeightedDataset]
    step: float
    level: int


@dataclass
class ProtocolResult:
    summary: QuantileSummary
    ledger: CommLedger
    per_node_summaries: dict[int, int]
    global_weight: float
    steps: dict[int, float]
    node_traces: dict[int, NodeTrace] = field(default_factory=dict)


def subtree_sums(topology: TreeTopology, local_values: Mapping[int, float]) -> dict[int, float]:
    """Per-node reduce-phase partial: own value plus both children's partials."""
    missing = [n for n in topology.parents if n not in local_values]
    if missing:
        raise ValueError(f"missing local values for nodes {sorted(missing)}")
    partial: dict[int, float] = {}
    for node in topology.nodes_bottom_up():
        kids = topology.children[node]
        partial[node] = math.fsum(
            [float(local_values[node])] + [partial[c] for c in kids]
        )
    return partial


def allreduce_sum(
    topology: TreeTopology,
    local_values: Mapping[int, float],
    ledger: Optional[CommLedger] = None,
    phase: str = CommLedger.PREROUND,
) -> float:
    """Reduce local scalars up the tree, then broadcast the root total down.

    Returns the global sum, which every node holds after the broadcast. Each
    edge carries one scalar record per phase.
    """
    partial = subtree_sums(topology, local_values)
    if ledger is not None:
        for node, parent in topology.parents.items():
            if parent is not None:
                ledger.log(node, parent, 1, phase)  # reduce
        for node, parent in topology.parents.items():
            if parent is not None:
                ledger.log(parent, node, 1, phase)  # broadcast
    return float(partial[topology.root])


def _check_protocol_params(eps: float, delta: float) -> None:
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def _flat_common(parts: Partitioning, eps: float, delta: float) -> tuple[CommLedger, float]:
    _check_protocol_params(eps, delta)
    for j, shard in enumerate(parts.shards):
        if len(shard) == 0:
            raise ValueError(f"shard {j} is empty")
    ledger = CommLedger()
    for j in range(parts.k):
        ledger.log(j, COORDINATOR, 1, CommLedger.PREROUND)
    return ledger, parts.global_weight


def _finish_flat(
    parts: Partitioning,
    summaries: list[QuantileSummary],
    ledger: CommLedger,
    global_weight: float,
    steps: dict[int, float],
) -> ProtocolResult:
    for j, s in enumerate(summaries):
        ledger.log(j, COORDINATOR, len(s), CommLedger.SUMMARY)
    if parts.k == 1:
        final = summaries[0]
    else:
        final = merge_summaries(summaries, step=max(steps.values()), source_weight=global_weight)
    return ProtocolResult(
        summary=final,
        ledger=ledger,
        per_node_summaries={j: len(s) for j, s in enumerate(summaries)},
        global_weight=global_weight,
        steps=steps,
    )


def flat_protocol(
    parts: Partitioning, eps: float, delta: float, rng: RandomSource
) -> ProtocolResult:
    """One-round star protocol with a common step on every node.

    Step: eps * w_D / sqrt(k * log(2/delta)). Each node builds its local
    summary with a fresh independent offset and ships it to the coordinator;
    the final summary is the coalesced union of all node summaries (ledger
    counts are taken before coalescing).
    """
    ledger, w_d = _flat_common(parts, eps, delta)
    step = eps * w_d / math.sqrt(parts.k * math.log(2.0 / delta))
    summaries = [
        build(shard, step, derive_stream(rng, j)) for j, shard in enumerate(parts.shards)
    ]
    steps = {j: step for j in range(parts.k)}
    return _finish_flat(parts, summaries, ledger, w_d, steps)


def flat_protocol_balanced(
    parts: Partitioning, eps: float, delta: float, rng: RandomSource
) -> ProtocolResult:
    """Flat protocol with per-node steps sized to cap individual traffic.

    Shards lighter than w_D / sqrt(k) keep the common step; heavier shards
    use eps * w_shard / sqrt(log(2/delta)), which bounds any single node's
    summary at about sqrt(log(2/delta)) / eps records.
    """
    ledger, w_d = _flat_common(parts, eps, delta)
    log_term = math.log(2.0 / delta)
    common_step = eps * w_d / math.sqrt(parts.k * log_term)
    steps: dict[int, float] = {}
    summaries: list[QuantileSummary] = []
    for j, shard in enumerate(parts.shards):
        w_j = shard.total_weight
        if w_j < w_d / math.sqrt(parts.k):
            step_j = common_step
        else:
            step_j = eps * w_j / math.sqrt(log_term)
        steps[j] = step_j
        summaries.append(build(shard, step_j, derive_stream(rng, j)))
    return _finish_flat(parts, summaries, ledger, w_d, steps)


def tree_protocol(
    topology: TreeTopology, eps: float, delta: float, rng: RandomSource
) -> ProtocolResult:
    """Tree-shape all-reduce of summaries.

    After a scalar weight all-reduce, leaves summarize their local data with
    the base step t = eps * w_D / sqrt(2 k log2(k) log(2/delta)), where k is
    the number of nodes holding data. An internal node at level h combines
    its local data with both child summaries and re-summarizes with step
    sqrt(2)^h * t. The root's summary is the final result; each non-root node
    ships its summary to its parent. With k = 1 the base step degenerates to
    the flat single-node step eps * w_D / sqrt(log(2/delta)).
    """
    _check_protocol_params(eps, delta)
    ledger = CommLedger()
    local_weights = {
        n: (topology.dataset_of(n).total_weight if topology.dataset_of(n) is not None else 0.0)
        for n in topology.parents
    }
    w_d = allreduce_sum(topology, local_weights, ledger, CommLedger.PREROUND)
    if w_d <= 0:
        raise ValueError("no data anywhere in the topology")
    k = topology.data_node_count
    log_term = math.log(2.0 / delta)
    if k == 1:
        base_step = eps * w_d / math.sqrt(log_term)
    else:
        base_step = eps * w_d / math.sqrt(2.0 * k * math.log2(k) * log_term)
    summaries: dict[int, QuantileSummary] = {}
    traces: dict[int, NodeTrace] = {}
    for node in topology.nodes_bottom_up():
        level = topology.levels[node]
        step_j = (math.sqrt(2.0) ** level) * base_step
        pairs: list[tuple[float, float]] = []
        local = topology.dataset_of(node)
        if local is not None:
            pairs.extend(zip(local.values.tolist(), local.weights.tolist()))
        for child in topology.children[node]:
            child_summary = summaries[child]
            pairs.extend(zip(child_summary.values.tolist(), child_summary.weights.tolist()))
        if pairs:
            combined = coalesce(pairs)
            summary = build(combined, step_j, derive_stream(rng, node))
        else:
            combined = None
            summary = empty_summary(step_j)
        summaries[node] = summary
        traces[node] = NodeTrace(summary=summary, combined=combined, step=step_j, level=level)
        parent = topology.parents[node]
        if parent is not None:
            ledger.log(node, parent, len(summary), CommLedger.SUMMARY)
    return ProtocolResult(
        summary=summaries[topology.root],
        ledger=ledger,
        per_node_summaries={n: len(s) for n, s in summaries.items()},
        global_weight=w_d,
        steps={n: traces[n].step for n in traces},
        node_traces=traces,
    )


def balanced_tree_over_shards(parts: Partitioning) -> TreeTopology:
    """Binary tree whose leaves hold the shards; internal nodes hold no data.

    Node ids: leaves are the shard indices 0..k-1, internal nodes are
    numbered from k upward, bottom level first.
    """
    k = parts.k
    if k == 1:
        return TreeTopology({0: None}, {0: parts.shards[0]})
    parents: dict[int, Optional[int]] = {}
    current = list(range(k))
    next_id = k
    while len(current) > 1:
        merged: list[int] = []
        i = 0
        while i + 1 < len(current):
            parents[current[i]] = next_id
            parents[current[i + 1]] = next_id
            merged.append(next_id)
            next_id += 1
            i += 2
        if i < len(current):  # odd one out rises unchanged
            merged.append(current[i])
        current = merged
    parents[current[0]] = None
    datasets = {j: shard for j, shard in enumerate(parts.shards)}
    return TreeTopology(parents, datasets)
