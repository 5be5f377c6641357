"""Split-gain estimation: exact variance gain, gradient-weighted sampling with
Horvitz-Thompson correction, the GOSS baseline, and both closed-form error
bounds.

All logarithms in the bound evaluators are natural; they originate from the
exponential tail inequalities behind the bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import GradientSet, RandomSource

__all__ = [
    "SampledInstance",
    "GainEstimate",
    "GossSample",
    "variance_gain_exact",
    "weighted_sample",
    "variance_gain_ws",
    "ws_error_bound",
    "goss_sample",
    "variance_gain_goss",
    "goss_error_bound",
]


@dataclass(frozen=True)
class SampledInstance:
    value: float
    gradient: float
    inclusion_probability: float


@dataclass(frozen=True)
class GainEstimate:
    split_value: float
    gain: float
    left_count: int
    right_count: int


@dataclass(frozen=True)
class GossSample:
    """Deterministic top-gradient set plus a uniform draw from the remainder."""

    top_set: tuple[tuple[float, float], ...]
    sampled_set: tuple[tuple[float, float], ...]
    top_fraction: float
    rest_fraction: float


def _side_masks(values: np.ndarray, split: float) -> tuple[np.ndarray, np.ndarray]:
    # Instances equal to the split value belong to neither side.
    return values < split, values > split


def variance_gain_exact(grads: GradientSet, split: float) -> GainEstimate:
    """Split-quality score: normalized squared gradient sums of both strict sides.

    Requires at least one instance strictly on each side of the split.
    """
    left, right = _side_masks(grads.values, split)
    n_left = int(left.sum())
    n_right = int(right.sum())
    if n_left == 0:
        raise ValueError(f"no instance strictly left of split {split}")
    if n_right == 0:
        raise ValueError(f"no instance strictly right of split {split}")
    left_sum = float(grads.gradients[left].sum())
    right_sum = float(grads.gradients[right].sum())
    gain = (left_sum**2 / n_left + right_sum**2 / n_right) / grads.count
    return GainEstimate(split_value=float(split), gain=gain, left_count=n_left, right_count=n_right)


def weighted_sample(grads: GradientSet, budget: float, rng: RandomSource) -> list[SampledInstance]:
    """Include each instance independently with probability min(1, budget*|g|/W).

    W is the total absolute gradient; the expected sample size is at most
    `budget`. Instances whose scaled gradient reaches W are always included.
    One uniform draw is consumed per instance, in instance order.
    """
    if budget <= 0:
        raise ValueError(f"budget must be > 0, got {budget}")
    total = grads.total_abs_gradient
    if total == 0:
        raise ValueError("sampling undefined: total absolute gradient is zero")
    probs = np.minimum(1.0, budget * np.abs(grads.gradients) / total)
    draws = rng.generator().random(grads.count)
    included = draws < probs
    return [
        SampledInstance(float(v), float(g), float(p))
        for v, g, p in zip(grads.values[included], grads.gradients[included], probs[included])
    ]


def variance_gain_ws(
    sample: Sequence[SampledInstance],
    left_count: int,
    right_count: int,
    n: int,
    split: float,
) -> GainEstimate:
    """Variance gain estimated from a weighted sample.

    Sampled gradients are divided by their inclusion probabilities so the
    side sums are unbiased; denominators use the exact side counts, which the
    caller supplies. Sampled instances equal to the split contribute to
    neither side.
    """
    if left_count < 1:
        raise ValueError(f"left_count must be >= 1, got {left_count}")
    if right_count < 1:
        raise ValueError(f"right_count must be >= 1, got {right_count}")
    left_sum = 0.0
    right_sum = 0.0
    for inst in sample:
        if inst.value < split:
            left_sum += inst.gradient / inst.inclusion_probability
        elif inst.value > split:
            right_sum += inst.gradient / inst.inclusion_probability
    gain = (left_sum**2 / left_count + right_sum**2 / right_count) / n
    return GainEstimate(split_value=float(split), gain=gain, left_count=left_count, right_count=right_count)


def ws_error_bound(total_abs_gradient: float, n: int, budget: float, delta: float) -> float:
    """High-probability bound on the weighted-sampling gain error.

    Two closed-form terms: 4W^2/(n*s) * sqrt(log(4/delta)) plus
    2W^2/(n*s^2) * log(4/delta).
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if budget <= 0:
        raise ValueError(f"budget must be > 0, got {budget}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    log_term = math.log(4.0 / delta)
    w_sq = total_abs_gradient**2
    return 4.0 * w_sq / (n * budget) * math.sqrt(log_term) + 2.0 * w_sq / (n * budget**2) * log_term


def _top_order(gradients: np.ndarray) -> np.ndarray:
    # Descending |g|; equal magnitudes broken by smaller instance index.
    return np.argsort(-np.abs(gradients), kind="stable")


def goss_sample(
    grads: GradientSet, top_fraction: float, rest_fraction: float, rng: RandomSource
) -> GossSample:
    """Keep the floor(a*n) largest-|gradient| instances, then sample
    floor(b*n) of the remainder uniformly without replacement."""
    _validate_goss_fractions(top_fraction, rest_fraction)
    n = grads.count
    top_count = math.floor(top_fraction * n)
    if top_count < 1:
        raise ValueError(f"top fraction {top_fraction} keeps no instance of {n}")
    rest_count = math.floor(rest_fraction * n)
    order = _top_order(grads.gradients)
    top_idx = np.sort(order[:top_count])
    remainder = np.sort(order[top_count:])
    chosen = rng.generator().choice(remainder, size=rest_count, replace=False)
    chosen = np.sort(chosen)
    return GossSample(
        top_set=tuple((float(grads.values[i]), float(grads.gradients[i])) for i in top_idx),
        sampled_set=tuple((float(grads.values[i]), float(grads.gradients[i])) for i in chosen),
        top_fraction=float(top_fraction),
        rest_fraction=float(rest_fraction),
    )


def variance_gain_goss(
    gs: GossSample, n: int, split: float, left_count: int, right_count: int
) -> GainEstimate:
    """Variance gain from a GOSS sample: sampled-set gradients are amplified
    by (1-a)/b, top-set gradients enter unamplified."""
    if left_count < 1:
        raise ValueError(f"left_count must be >= 1, got {left_count}")
    if right_count < 1:
        raise ValueError(f"right_count must be >= 1, got {right_count}")
    amplification = (1.0 - gs.top_fraction) / gs.rest_fraction
    left_sum = 0.0
    right_sum = 0.0
    for value, gradient in gs.top_set:
        if value < split:
            left_sum += gradient
        elif value > split:
            right_sum += gradient
    for value, gradient in gs.sampled_set:
        if value < split:
            left_sum += amplification * gradient
        elif value > split:
            right_sum += amplification * gradient
    gain = (left_sum**2 / left_count + right_sum**2 / right_count) / n
    return GainEstimate(split_value=float(split), gain=gain, left_count=left_count, right_count=right_count)


def goss_error_bound(
    grads: GradientSet, top_fraction: float, rest_fraction: float, split: float, delta: float
) -> float:
    """Published high-probability bound for the GOSS gain error.

    Uses the amplification constant (1-a)/sqrt(b) times the largest remainder
    gradient, and the larger of the two sides' mean absolute gradients.
    """
    _validate_goss_fractions(top_fraction, rest_fraction)
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    n = grads.count
    top_count = math.floor(top_fraction * n)
    if top_count < 1:
        raise ValueError(f"top fraction {top_fraction} keeps no instance of {n}")
    order = _top_order(grads.gradients)
    remainder = order[top_count:]
    max_rest = float(np.abs(grads.gradients[remainder]).max())
    c_ab = (1.0 - top_fraction) / math.sqrt(rest_fraction) * max_rest
    left, right = _side_masks(grads.values, split)
    if not left.any():
        raise ValueError(f"no instance strictly left of split {split}")
    if not right.any():
        raise ValueError(f"no instance strictly right of split {split}")
    abs_g = np.abs(grads.gradients)
    d_v = max(float(abs_g[left].mean()), float(abs_g[right].mean()))
    log_term = math.log(1.0 / delta)
    return c_ab**2 * log_term + 2.0 * d_v * c_ab * math.sqrt(log_term / n)


def _validate_goss_fractions(top_fraction: float, rest_fraction: float) -> None:
    if not 0 < top_fraction < 1:
        raise ValueError(f"top fraction must lie in (0, 1), got {top_fraction}")
    if not 0 < rest_fraction < 1:
        raise ValueError(f"rest fraction must lie in (0, 1), got {rest_fraction}")
    if top_fraction + rest_fraction > 1:
        raise ValueError(
            f"top and rest fractions must sum to at most 1, got {top_fraction + rest_fraction}"
        )
