"""Threshold generators for numeric features.

Every discretizer is fitted on the calibration set. Thresholds split the real
line into groups; a value equal to a threshold belongs to the group below it,
so the rendered conditions ``f <= t`` and ``f > t`` are exhaustive and
exclusive.
"""

from __future__ import annotations

import logging
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .data import Dataset

__all__ = [
    "KINDS",
    "BINARY_KINDS",
    "Cut",
    "Discretizer",
    "fit_binary_median",
    "fit_binary_entropy",
    "fit_quantile",
    "fit_entropy",
    "assign_group",
    "fit_discretizer",
]

logger = logging.getLogger(__name__)

KINDS = ("binary_entropy", "binary_median", "quartile", "decile", "entropy")
BINARY_KINDS = ("binary_entropy", "binary_median")

_GAIN_EPS = 1e-12


class Cut(NamedTuple):
    """Thresholds for one feature; ``fallback`` marks a fit that used its backup rule."""

    thresholds: tuple[float, ...]
    fallback: bool = False


def _median(values) -> float:
    return float(np.median(np.asarray(values, dtype=float)))


def fit_binary_median(values) -> Cut:
    """Median threshold; a constant column gets none."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("fit_binary_median needs at least one value")
    if v.min() == v.max():
        return Cut(())
    return Cut((_median(v),))


def _entropy_bits(pos, n):
    p = np.divide(pos, n, out=np.zeros_like(pos, dtype=float), where=n > 0)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        return -(np.where(p > 0, p * np.log2(p), 0.0) + np.where(q > 0, q * np.log2(q), 0.0))


def _best_split(v: np.ndarray, y: np.ndarray):
    """Information-gain maximizing midpoint for sorted ``v``; ties go to the smallest threshold.

    Returns ``(gain, threshold, split_position)`` or None when there is no
    candidate or no split with positive gain.
    """
    n = v.size
    if n < 2:
        return None
    gaps = np.flatnonzero(v[:-1] < v[1:])
    if gaps.size == 0:
        return None
    cum = np.cumsum(y)
    total = cum[-1]
    left_n = gaps + 1.0
    left_p = cum[gaps]
    child = (left_n * _entropy_bits(left_p, left_n)
             + (n - left_n) * _entropy_bits(total - left_p, n - left_n)) / n
    gain = _entropy_bits(np.array([total]), np.array([float(n)]))[0] - child
    best = gain.max()
    if best <= _GAIN_EPS:
        return None
    k = int(np.flatnonzero(gain >= best - _GAIN_EPS)[0])
    i = int(gaps[k])
    thr = 0.5 * (v[i] + v[i + 1])
    if thr >= v[i + 1]:
        thr = float(v[i])
    return float(best), float(thr), i + 1


def _sorted_xy(values, labels):
    v = np.asarray(values, dtype=float)
    y = np.asarray(labels, dtype=float)
    if v.shape != y.shape:
        raise ValueError("values and labels differ in length")
    order = np.lexsort((y, v))
    return v[order], y[order]


def fit_binary_entropy(values, labels) -> Cut:
    """Threshold of a depth-1 entropy tree on the column.

    Candidates are midpoints between consecutive distinct values. Without a
    split of positive gain the median threshold is used and flagged.
    """
    v, y = _sorted_xy(values, labels)
    if v.size == 0:
        raise ValueError("fit_binary_entropy needs at least one value")
    found = _best_split(v, y)
    if found is None:
        cut = fit_binary_median(v)
        return Cut(cut.thresholds, True)
    return Cut((found[1],))


def _separating(thresholds, v: np.ndarray) -> tuple[float, ...]:
    """Keep thresholds that separate observed values, one per gap between distinct values."""
    kept = []
    seen = set()
    for t in sorted(set(float(t) for t in thresholds)):
        gap = int(np.searchsorted(v, t, side="right"))
        if 0 < gap < v.size and gap not in seen:
            seen.add(gap)
            kept.append(t)
    return tuple(kept)


def fit_quantile(values, q: int = 4) -> Cut:
    """Thresholds at the interior ``q``-quantiles (linear interpolation between closest ranks).

    Quantiles that coincide, or that do not separate any two observed values,
    collapse, so small or constant columns get fewer thresholds.
    """
    if q not in (4, 10):
        raise ValueError("q must be 4 (quartiles) or 10 (deciles)")
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("fit_quantile needs at least one value")
    qs = np.percentile(v, np.arange(1, q) * 100.0 / q)
    return Cut(_separating(qs, v))


def fit_entropy(values, labels, depth: int = 3) -> Cut:
    """Split points of a single-feature entropy tree grown to ``depth``.

    Without any positive-gain split the quartile thresholds are used and
    flagged.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    v, y = _sorted_xy(values, labels)
    if v.size == 0:
        raise ValueError("fit_entropy needs at least one value")
    thresholds = []
    stack = [(0, v.size, 0)]
    while stack:
        lo, hi, d = stack.pop()
        if d >= depth:
            continue
        found = _best_split(v[lo:hi], y[lo:hi])
        if found is None:
            continue
        _, thr, pos = found
        thresholds.append(thr)
        stack.append((lo, lo + pos, d + 1))
        stack.append((lo + pos, hi, d + 1))
    if not thresholds:
        return Cut(fit_quantile(v, 4).thresholds, True)
    return Cut(tuple(sorted(set(thresholds))))


def assign_group(thresholds: Sequence[float], value: float) -> int:
    """Index ``i`` with ``thresholds[i-1] < value <= thresholds[i]`` (virtual infinite ends)."""
    return bisect_left(thresholds, value)


@dataclass(frozen=True)
class Discretizer:
    """Fitted thresholds for every numeric feature; categorical features carry none."""

    kind: str
    thresholds: dict[int, tuple[float, ...]]
    fallback: frozenset[int] = field(default_factory=frozenset)
    depth: int = 3

    @property
    def is_binary(self) -> bool:
        return self.kind in BINARY_KINDS

    def group(self, feature: int, value: float) -> int:
        return assign_group(self.thresholds[feature], value)


def fit_discretizer(kind: str, calibration: Dataset, depth: int = 3) -> Discretizer:
    kind = kind.replace("-", "_")
    if kind not in KINDS:
        raise ValueError(f"unknown discretizer {kind!r}; choose from {', '.join(KINDS)}")
    thresholds: dict[int, tuple[float, ...]] = {}
    fallback = set()
    y = calibration.y
    for j, feat in enumerate(calibration.schema):
        if feat.is_categorical:
            continue
        col = calibration.X[:, j]
        if kind == "binary_median":
            cut = fit_binary_median(col)
        elif kind == "binary_entropy":
            cut = fit_binary_entropy(col, y)
        elif kind == "quartile":
            cut = fit_quantile(col, 4)
        elif kind == "decile":
            cut = fit_quantile(col, 10)
        else:
            cut = fit_entropy(col, y, depth)
        thresholds[j] = cut.thresholds
        if cut.fallback:
            fallback.add(j)
            logger.info("discretizer %s fell back for feature %r", kind, feat.name)
    return Discretizer(kind, thresholds, frozenset(fallback), depth)
