"""Isotonic regression and inductive Venn-Abers calibration.

Two query paths are provided. :func:`va_interval` refits both isotonic
calibrators from scratch for every test score and is kept as the reference.
:class:`FastVennAbers` pools the calibration scores once and answers queries
by resuming pool-adjacent-violators from persisted prefix/suffix states.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "IsotonicFit",
    "ProbabilityInterval",
    "VennAbersCalibrator",
    "FastVennAbers",
    "pava_fit",
    "isotonic_eval",
    "regularize",
    "va_interval",
    "cheat_endpoint",
    "va_fast_build",
    "va_fast_query",
]

# p0 and p1 come from different float expressions; ordering slips below this are rounding
_ORDER_SLACK = 1e-12


@dataclass(frozen=True)
class IsotonicFit:
    """Monotone step function: ``values[i]`` holds on ``[breakpoints[i], breakpoints[i+1])``."""

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.breakpoints) != len(self.values) or not self.breakpoints:
            raise ValueError("breakpoints and values must be non-empty and equal length")

    def __call__(self, score: float) -> float:
        return isotonic_eval(self, score)


@dataclass(frozen=True)
class ProbabilityInterval:
    """Venn-Abers output for the positive class: bounds ``p0 <= p1`` and regularized ``p``."""

    p0: float
    p1: float
    p: float

    def __post_init__(self):
        if not (0.0 <= self.p0 <= self.p1 <= 1.0):
            raise ValueError(f"invalid interval [{self.p0}, {self.p1}]")
        if not (self.p0 <= self.p <= self.p1):
            raise ValueError(f"estimate {self.p} outside [{self.p0}, {self.p1}]")

    @classmethod
    def from_bounds(cls, p0: float, p1: float) -> "ProbabilityInterval":
        return cls(p0, p1, regularize(p0, p1))

    @property
    def width(self) -> float:
        return self.p1 - self.p0


def _pool_sorted(scores, targets, weights):
    """Sort by score and merge equal scores into (score, weighted sum, weight) runs."""
    s = np.asarray(scores, dtype=float)
    t = np.asarray(targets, dtype=float)
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=float)
    if s.ndim != 1 or s.shape != t.shape or s.shape != w.shape:
        raise ValueError("scores, targets and weights must be 1-d and equal length")
    if s.size == 0:
        raise ValueError("pava_fit needs at least one point")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(t))):
        raise ValueError("scores and targets must be finite")
    uniq, inverse = np.unique(s, return_inverse=True)
    sums = np.bincount(inverse, weights=w * t, minlength=uniq.size)
    wsum = np.bincount(inverse, weights=w, minlength=uniq.size)
    return uniq.tolist(), sums.tolist(), wsum.tolist()


def _pava(sums: Sequence[float], weights: Sequence[float]) -> list[float]:
    """Pool adjacent violators over already ordered (sum, weight) blocks; returns per-block fits."""
    block_s: list[float] = []
    block_w: list[float] = []
    block_n: list[int] = []
    for s, w in zip(sums, weights):
        n = 1
        # merge while the previous block's mean exceeds the new one's
        while block_s and block_s[-1] * w > s * block_w[-1]:
            s += block_s.pop()
            w += block_w.pop()
            n += block_n.pop()
        block_s.append(s)
        block_w.append(w)
        block_n.append(n)
    fitted: list[float] = []
    for s, w, n in zip(block_s, block_w, block_n):
        fitted.extend([s / w] * n)
    return fitted


def pava_fit(points: Iterable[tuple] | None = None, *, scores=None, targets=None,
             weights=None) -> IsotonicFit:
    """Weighted least-squares monotone nondecreasing fit by pool-adjacent-violators.

    Accepts either an iterable of ``(score, target[, weight])`` tuples or the
    ``scores``/``targets``/``weights`` keyword arrays. Equal scores are pooled
    to their weighted mean before PAVA runs, so they always share a value.
    """
    if points is not None:
        pts = list(points)
        if not pts:
            raise ValueError("pava_fit needs at least one point")
        scores = [p[0] for p in pts]
        targets = [p[1] for p in pts]
        weights = [p[2] if len(p) > 2 else 1.0 for p in pts]
    elif scores is None or targets is None:
        raise ValueError("pava_fit needs points or scores and targets")
    uniq, sums, wsum = _pool_sorted(scores, targets, weights)
    return IsotonicFit(tuple(uniq), tuple(_pava(sums, wsum)))


def isotonic_eval(fit: IsotonicFit, score: float) -> float:
    """Right-continuous step evaluation, clamped to the end values outside the breakpoints."""
    i = bisect_right(fit.breakpoints, score) - 1
    return fit.values[max(i, 0)]


def regularize(p0: float, p1: float) -> float:
    """Collapse ``[p0, p1]`` into ``p1 / (1 - p0 + p1)``.

    The result is clamped into ``[p0, p1]`` so that float rounding in the
    denominator can never push it an ulp outside the interval.
    """
    if p0 > p1:
        raise ValueError(f"p0={p0} exceeds p1={p1}")
    if not (0.0 <= p0 and p1 <= 1.0):
        raise ValueError(f"interval [{p0}, {p1}] not inside [0, 1]")
    p = p1 / (1.0 - p0 + p1)
    return min(max(p, p0), p1)


def _ordered(p0: float, p1: float) -> tuple[float, float]:
    if p0 > p1:
        if p0 - p1 > _ORDER_SLACK:
            raise ArithmeticError(f"Venn-Abers bounds out of order: {p0} > {p1}")
        p0 = p1
    return p0, p1


class VennAbersCalibrator:
    """Calibration pairs ``(s(x_i), y_i)`` of an inductive Venn-Abers predictor.

    Parameters
    ----------
    scores : array-like of float
        Prediction scores of the calibration objects, in [0, 1].
    labels : array-like of {0, 1}
        True labels of the calibration objects. Both classes must occur.
    """

    def __init__(self, scores, labels):
        s = np.asarray(scores, dtype=float).ravel()
        y = np.asarray(labels).ravel()
        if s.shape != y.shape:
            raise ValueError("scores and labels differ in length")
        if s.size < 2:
            raise ValueError("a Venn-Abers calibrator needs at least two calibration pairs")
        if not np.all(np.isin(y, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        if np.all(y == 0) or np.all(y == 1):
            raise ValueError("calibration labels must contain both classes")
        if not np.all(np.isfinite(s)):
            raise ValueError("calibration scores must be finite")
        y = y.astype(int)
        # stable secondary order: label, then original position
        order = np.lexsort((np.arange(s.size), y, s))
        self.scores = s[order]
        self.labels = y[order]
        self.scores.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return int(self.scores.size)

    def interval(self, test_score: float) -> ProbabilityInterval:
        return va_interval(self, test_score)


def va_interval(cal: VennAbersCalibrator, test_score: float) -> ProbabilityInterval:
    """Reference Venn-Abers query: refit isotonic regression with the test point labelled 0 and 1."""
    test_score = float(test_score)
    s = np.append(cal.scores, test_score)
    g0 = pava_fit(scores=s, targets=np.append(cal.labels, 0.0))
    g1 = pava_fit(scores=s, targets=np.append(cal.labels, 1.0))
    p0, p1 = _ordered(isotonic_eval(g0, test_score), isotonic_eval(g1, test_score))
    return ProbabilityInterval.from_bounds(p0, p1)


def cheat_endpoint(interval: ProbabilityInterval, true_label: int) -> float:
    """Interval end matching the true label: ``p0`` for class 0, ``p1`` for class 1."""
    return interval.p1 if true_label == 1 else interval.p0


class _Node:
    # persistent PAVA stack node: one pooled block, flagged if it holds the test point
    __slots__ = ("s", "w", "test", "below")

    def __init__(self, s, w, test, below):
        self.s = s
        self.w = w
        self.test = test
        self.below = below


def _push_left(top, s, w, test=False):
    # stack grows rightwards; merge while the block below has a larger mean
    while top is not None and top.s * w > s * top.w:
        s += top.s
        w += top.w
        test = test or top.test
        top = top.below
    return _Node(s, w, test, top)


def _push_right(top, s, w, test=False):
    # stack grows leftwards; merge while the block below (to the right) has a smaller mean
    while top is not None and s * top.w > top.s * w:
        s += top.s
        w += top.w
        test = test or top.test
        top = top.below
    return _Node(s, w, test, top)


class FastVennAbers:
    """Build-once / query-many Venn-Abers predictor.

    Calibration scores are pooled into ``K`` distinct values and PAVA stacks
    are stored persistently for every prefix and suffix. A query inserts the
    test point at its slot and finishes PAVA over whichever side is shorter,
    so each slot costs at most about ``K/2`` pushes. Results are memoized per
    slot since there are only ``2K + 1`` distinct answers.
    """

    def __init__(self, cal: VennAbersCalibrator):
        self.calibrator = cal
        self._u, self._s, self._w = _pool_sorted(cal.scores, cal.labels, None)
        k = len(self._u)
        self._prefix = [None] * (k + 1)
        top = None
        for i in range(k):
            top = _push_left(top, self._s[i], self._w[i])
            self._prefix[i + 1] = top
        self._suffix = [None] * (k + 1)
        top = None
        for i in range(k - 1, -1, -1):
            top = _push_right(top, self._s[i], self._w[i])
            self._suffix[i] = top
        self._cache: dict[tuple[int, bool], ProbabilityInterval] = {}

    def _value(self, i: int, hit: bool, target: float) -> float:
        """Fitted value at the test point inserted before pooled element ``i`` (onto it if ``hit``)."""
        k = len(self._u)
        s_t, w_t = target, 1.0
        if hit:
            s_t += self._s[i]
            w_t += self._w[i]
        right_start = i + 1 if hit else i
        if i <= k - right_start:
            top = _push_right(self._suffix[right_start], s_t, w_t, True)
            for j in range(i - 1, -1, -1):
                top = _push_right(top, self._s[j], self._w[j])
        else:
            top = _push_left(self._prefix[i], s_t, w_t, True)
            for j in range(right_start, k):
                top = _push_left(top, self._s[j], self._w[j])
        while not top.test:
            top = top.below
        return top.s / top.w

    def query(self, test_score: float) -> ProbabilityInterval:
        test_score = float(test_score)
        i = bisect_left(self._u, test_score)
        hit = i < len(self._u) and self._u[i] == test_score
        key = (i, hit)
        cached = self._cache.get(key)
        if cached is None:
            p0, p1 = _ordered(self._value(i, hit, 0.0), self._value(i, hit, 1.0))
            cached = ProbabilityInterval.from_bounds(p0, p1)
            self._cache[key] = cached
        return cached

    def query_many(self, test_scores) -> list[ProbabilityInterval]:
        return [self.query(s) for s in np.asarray(test_scores, dtype=float).ravel()]


def va_fast_build(cal: VennAbersCalibrator) -> FastVennAbers:
    return FastVennAbers(cal)


def va_fast_query(structure: FastVennAbers, test_score: float) -> ProbabilityInterval:
    return structure.query(test_score)
