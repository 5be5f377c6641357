"""Shared data model: weighted datasets, gradient sets, random streams, message ledger.

Values and weights are 64-bit floats throughout. Rank accumulation uses
compensated (Neumaier) summation so downstream tolerance checks hold at
~1e-12 relative accuracy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

__all__ = [
    "WeightedItem",
    "WeightedDataset",
    "GradientSet",
    "RandomSource",
    "CommLedger",
    "coalesce",
    "rank_exact",
    "derive_stream",
    "compensated_cumsum",
]


class WeightedItem(NamedTuple):
    value: float
    weight: float


def compensated_cumsum(values: Sequence[float]) -> np.ndarray:
    """Prefix sums of `values` with Neumaier compensation.

    Returns an array of length len(values)+1 where entry i is the sum of the
    first i values; entry 0 is 0.0.
    """
    out = np.empty(len(values) + 1, dtype=np.float64)
    out[0] = 0.0
    total = 0.0
    comp = 0.0
    for i, v in enumerate(values):
        v = float(v)
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
        out[i + 1] = total + comp
    return out


@dataclass(frozen=True)
class WeightedDataset:
    """Sorted (value, weight) pairs with strictly increasing values.

    `prefix[i]` holds the total weight strictly below `values[i]`; the final
    entry equals `total_weight`. Construct through :func:`coalesce`.
    """

    values: np.ndarray
    weights: np.ndarray
    prefix: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values.setflags(write=False)
        self.weights.setflags(write=False)
        self.prefix.setflags(write=False)

    @property
    def total_weight(self) -> float:
        return float(self.prefix[-1])

    @property
    def items(self) -> tuple[WeightedItem, ...]:
        return tuple(WeightedItem(float(v), float(w)) for v, w in zip(self.values, self.weights))

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightedDataset):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(self.weights, other.weights)


def coalesce(raw: Iterable[tuple[float, float]]) -> WeightedDataset:
    """Sort items ascending by value and merge duplicates by summing weights.

    Raises ValueError (with the offending index) if any weight is not strictly
    positive.
    """
    pairs = [(float(v), float(w)) for v, w in raw]
    for i, (_, w) in enumerate(pairs):
        if not w > 0:
            raise ValueError(f"weight at index {i} must be > 0, got {w}")
    if not pairs:
        return WeightedDataset(
            values=np.empty(0), weights=np.empty(0), prefix=np.zeros(1)
        )
    pairs.sort(key=lambda p: p[0])
    values: list[float] = []
    groups: list[list[float]] = []
    for v, w in pairs:
        if values and v == values[-1]:
            groups[-1].append(w)
        else:
            values.append(v)
            groups.append([w])
    weights = [g[0] if len(g) == 1 else _exact_sum(g) for g in groups]
    varr = np.asarray(values, dtype=np.float64)
    warr = np.asarray(weights, dtype=np.float64)
    return WeightedDataset(values=varr, weights=warr, prefix=compensated_cumsum(warr))


def _exact_sum(xs: Sequence[float]) -> float:
    return math.fsum(xs)


def rank_exact(dataset: WeightedDataset, v: float) -> tuple[float, float]:
    """Return (weight strictly below v, weight at-or-below v)."""
    lo = int(np.searchsorted(dataset.values, v, side="left"))
    hi = int(np.searchsorted(dataset.values, v, side="right"))
    return float(dataset.prefix[lo]), float(dataset.prefix[hi])


@dataclass(frozen=True)
class GradientSet:
    """Per-instance feature value and gradient, in instance order."""

    values: np.ndarray
    gradients: np.ndarray

    def __post_init__(self):
        if len(self.values) != len(self.gradients):
            raise ValueError("values and gradients must have equal length")
        self.values.setflags(write=False)
        self.gradients.setflags(write=False)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "GradientSet":
        arr = np.asarray(list(pairs), dtype=np.float64)
        if arr.size == 0:
            arr = arr.reshape(0, 2)
        return cls(values=arr[:, 0].copy(), gradients=arr[:, 1].copy())

    @property
    def count(self) -> int:
        return len(self.values)

    @property
    def total_abs_gradient(self) -> float:
        return _exact_sum(np.abs(self.gradients).tolist())


@dataclass(frozen=True)
class RandomSource:
    """Deterministic, splittable random stream.

    Backed by a Philox counter-based generator keyed by (master_seed, stream);
    identical (master_seed, stream) yields bit-identical draw sequences on any
    platform and regardless of execution order. Derive independent child
    streams with :func:`derive_stream` instead of sharing one generator.
    """

    master_seed: int
    stream: tuple[int, ...] = ()

    def generator(self) -> Generator:
        """Fresh generator positioned at the start of this stream."""
        return Generator(Philox(SeedSequence(self.master_seed, spawn_key=self.stream)))

    @property
    def stream_id(self) -> int:
        return self.stream[-1] if self.stream else 0


def derive_stream(source: RandomSource, child_id: int) -> RandomSource:
    """Child stream statistically independent of siblings and of the parent."""
    return RandomSource(source.master_seed, source.stream + (int(child_id),))


class CommLedger:
    """Record-level communication accounting.

    One record is one transmitted (value, weight) pair; scalar messages count
    as one record. Summary-phase traffic and the preliminary weight-sum round
    are tracked under separate phases: `total_records` covers the summary
    phase only, `preround_records` the weight synchronization.
    """

    SUMMARY = "summary"
    PREROUND = "preround"

    def __init__(self):
        self._edges: dict[tuple[int, int, str], int] = {}

    def log(self, sender: int, receiver: int, records: int, phase: str = SUMMARY) -> None:
        if records < 0:
            raise ValueError("records must be >= 0")
        key = (int(sender), int(receiver), phase)
        self._edges[key] = self._edges.get(key, 0) + int(records)

    def edges(self) -> list[tuple[int, int, str, int]]:
        return [(s, r, p, n) for (s, r, p), n in sorted(self._edges.items())]

    def _phase_total(self, phase: str) -> int:
        return sum(n for (_, _, p), n in self._edges.items() if p == phase)

    @property
    def total_records(self) -> int:
        return self._phase_total(self.SUMMARY)

    @property
    def preround_records(self) -> int:
        return self._phase_total(self.PREROUND)

    @property
    def grand_total(self) -> int:
        return sum(self._edges.values())

    def per_node_sent(self, phase: str = SUMMARY) -> dict[int, int]:
        out: dict[int, int] = {}
        for (s, _, p), n in self._edges.items():
            if p == phase:
                out[s] = out.get(s, 0) + n
        return out

    def merge(self, other: "CommLedger") -> None:
        for (s, r, p), n in other._edges.items():
            self.log(s, r, n, p)
