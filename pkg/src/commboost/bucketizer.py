"""Randomized weighted-quantile summary built on a shifted uniform grid.

A summary of step size t keeps exactly the items whose cumulative-weight
interval [rank(v_i), rank_plus(v_i)) contains a grid point b + j*t, where the
offset b is uniform in (0, t). Each kept item's weight is rounded to the
number of grid points it absorbed times t, which makes the summary's rank
estimate an unbiased, [-t, t]-bounded approximation of the exact rank.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .core import RandomSource, WeightedDataset, WeightedItem, coalesce, compensated_cumsum

__all__ = [
    "QuantileSummary",
    "build",
    "build_with_offset",
    "estimate_rank",
    "query_quantile",
    "as_weighted_dataset",
]


@dataclass(frozen=True)
class QuantileSummary:
    """Summary items sorted ascending by value, with grid metadata.

    For a summary produced by :func:`build`, every adjusted weight is a
    positive integer multiple of `step`, the item count is at most
    ceil(source_weight / step), and the total adjusted weight is within one
    step of `source_weight`. Summaries merged from several nodes (protocol
    coordinators) carry `offset=None` since no single grid shift applies.
    """

    values: np.ndarray
    weights: np.ndarray
    step: float
    offset: Optional[float]
    source_weight: float

    def __post_init__(self):
        self.values.setflags(write=False)
        self.weights.setflags(write=False)

    @cached_property
    def cum_weights(self) -> np.ndarray:
        """Prefix sums of adjusted weights, length len(self)+1."""
        return compensated_cumsum(self.weights)

    @property
    def total_adjusted_weight(self) -> float:
        return float(self.cum_weights[-1])

    @property
    def items(self) -> tuple[WeightedItem, ...]:
        return tuple(WeightedItem(float(v), float(w)) for v, w in zip(self.values, self.weights))

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantileSummary):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values)
            and np.array_equal(self.weights, other.weights)
            and self.step == other.step
            and self.offset == other.offset
            and self.source_weight == other.source_weight
        )


def build_with_offset(dataset: WeightedDataset, step: float, offset: float) -> QuantileSummary:
    """Construct the summary for a fixed grid offset.

    Selection and weight adjustment use the closed-form floor expressions over
    the dataset's exact prefix ranks, a single O(|D|) pass; grid points at or
    beyond the total weight match no item.
    """
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    if len(dataset) == 0:
        raise ValueError("cannot summarize an empty dataset")
    if not 0 < offset < step:
        raise ValueError(f"offset must lie in (0, step), got {offset} with step {step}")
    lo = np.floor((dataset.prefix[:-1] - offset) / step)
    hi = np.floor((dataset.prefix[1:] - offset) / step)
    multiples = (hi - lo).astype(np.int64)
    selected = multiples > 0
    return QuantileSummary(
        values=dataset.values[selected].copy(),
        weights=multiples[selected] * step,
        step=float(step),
        offset=float(offset),
        source_weight=dataset.total_weight,
    )


def build(dataset: WeightedDataset, step: float, rng: RandomSource) -> QuantileSummary:
    """Construct the summary with an offset drawn uniformly from (0, step).

    A draw landing exactly on 0.0 is rejected and redrawn so the floor
    arithmetic sees a strictly positive shift.
    """
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    gen = rng.generator()
    offset = 0.0
    while offset <= 0.0:
        offset = gen.uniform(0.0, step)
    return build_with_offset(dataset, step, offset)


def estimate_rank(summary: QuantileSummary, v: float) -> float:
    """Total adjusted weight of summary items strictly below v."""
    idx = int(np.searchsorted(summary.values, v, side="left"))
    return float(summary.cum_weights[idx])


def estimate_rank_grid(summary: QuantileSummary, queries: np.ndarray) -> np.ndarray:
    """Vectorized :func:`estimate_rank` over an array of query values."""
    idx = np.searchsorted(summary.values, queries, side="left")
    return summary.cum_weights[idx]


def query_quantile(summary: QuantileSummary, phi: float) -> float:
    """Smallest summary value whose cumulative adjusted weight reaches
    phi times the total adjusted weight; phi=0 returns the smallest value."""
    if len(summary) == 0:
        raise ValueError("cannot query an empty summary")
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must lie in [0, 1], got {phi}")
    target = phi * summary.total_adjusted_weight
    idx = int(np.searchsorted(summary.cum_weights[1:], target, side="left"))
    idx = min(idx, len(summary) - 1)
    return float(summary.values[idx])


def as_weighted_dataset(summary: QuantileSummary) -> WeightedDataset:
    """Expose the summary's items as weighted data for downstream composition."""
    return coalesce(zip(summary.values.tolist(), summary.weights.tolist()))


def merge_summaries(
    summaries: list[QuantileSummary], step: float, source_weight: float
) -> QuantileSummary:
    """Coalesce several node summaries into one coordinator summary.

    Items colliding on the same value are merged by weight summation; the
    result has no single grid offset.
    """
    pairs: list[tuple[float, float]] = []
    for s in summaries:
        pairs.extend(zip(s.values.tolist(), s.weights.tolist()))
    merged = coalesce(pairs)
    return QuantileSummary(
        values=merged.values.copy(),
        weights=merged.weights.copy(),
        step=float(step),
        offset=None,
        source_weight=float(source_weight),
    )


def empty_summary(step: float, source_weight: float = 0.0) -> QuantileSummary:
    """Summary of an empty dataset (used for data-free tree nodes)."""
    return QuantileSummary(
        values=np.empty(0),
        weights=np.empty(0),
        step=float(step),
        offset=None,
        source_weight=float(source_weight),
    )
