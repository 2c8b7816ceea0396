"""Accuracy, AUC, expected calibration error and log loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

__all__ = ["ReliabilityBins", "reliability_bins", "ece", "log_loss", "auc", "accuracy"]


def _check(probs, labels):
    p = np.asarray(probs, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if p.size == 0:
        raise ValueError("empty input")
    if p.shape != y.shape:
        raise ValueError(f"{p.size} probabilities but {y.size} labels")
    return p, y.astype(int)


@dataclass(frozen=True)
class ReliabilityBins:
    """Per-bin count, fraction of positives and mean positive-class probability."""

    edges: np.ndarray
    counts: np.ndarray
    fop: np.ndarray
    mopp: np.ndarray

    @property
    def M(self) -> int:
        return int(self.counts.size)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def ece(self) -> float:
        nonempty = self.counts > 0
        gaps = np.abs(self.fop[nonempty] - self.mopp[nonempty])
        return float(np.sum(self.counts[nonempty] / self.n * gaps))


def reliability_bins(probs, labels, M: int = 10, strategy: str = "width") -> ReliabilityBins:
    """Bin class-1 probabilities.

    ``strategy="width"`` uses equal-width bins ``[0, 1/M), ..., [(M-1)/M, 1]``;
    ``"frequency"`` uses bins holding (nearly) equal numbers of instances.
    Empty bins have NaN ``fop``/``mopp``.
    """
    p, y = _check(probs, labels)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    if M < 1:
        raise ValueError("M must be >= 1")
    if strategy == "width":
        edges = np.linspace(0.0, 1.0, M + 1)
        idx = np.minimum((p * M).astype(int), M - 1)
    elif strategy == "frequency":
        order = np.argsort(p, kind="stable")
        idx = np.empty(p.size, dtype=int)
        idx[order] = np.arange(p.size) * M // p.size
        upper = [p[order][np.flatnonzero(idx[order] == b)[-1]] if np.any(idx == b) else np.nan
                 for b in range(M)]
        edges = np.concatenate([[0.0], upper])
    else:
        raise ValueError(f"unknown binning strategy {strategy!r}")
    counts = np.bincount(idx, minlength=M)
    with np.errstate(invalid="ignore", divide="ignore"):
        fop = np.bincount(idx, weights=y, minlength=M) / counts
        mopp = np.bincount(idx, weights=p, minlength=M) / counts
    return ReliabilityBins(edges, counts, fop, mopp)


def ece(probs, labels, M: int = 10, strategy: str = "width") -> float:
    """Count-weighted mean of ``|fop - mopp|`` over the reliability bins."""
    return reliability_bins(probs, labels, M, strategy).ece()


def log_loss(probs, labels, base: float = 2, eps: float = 1e-15) -> float:
    """Mean ``-log`` of the probability given to the true label, clipped to ``[eps, 1 - eps]``.

    ``base`` defaults to 2 (bits); pass ``np.e`` for nats.
    """
    p, y = _check(probs, labels)
    p_true = np.clip(np.where(y == 1, p, 1.0 - p), eps, 1.0 - eps)
    return float(-np.mean(np.log(p_true)) / np.log(base))


def auc(probs, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    p, y = _check(probs, labels)
    n1 = int(np.sum(y == 1))
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(p)
    return float((ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def accuracy(probs, labels, threshold: float = 0.5) -> float:
    """Fraction of instances where ``prob > threshold`` matches the label."""
    p, y = _check(probs, labels)
    return float(np.mean((p > threshold).astype(int) == y))
