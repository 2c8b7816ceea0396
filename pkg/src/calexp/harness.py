"""Calibration comparison over repeated stratified CV, and explanation timing."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset, stratified_kfold, train_cal_split
from .explainer import CalibratedExplainer
from .metrics import accuracy, auc, ece, log_loss
from .models import ScoringModel, train_forest, train_tree
from .venn_abers import FastVennAbers, VennAbersCalibrator, cheat_endpoint

__all__ = [
    "SETUPS",
    "METRICS",
    "FoldResult",
    "MetricsReport",
    "TimingRow",
    "make_trainer",
    "run_comparison",
    "time_explanations",
    "timing_csv",
]

logger = logging.getLogger(__name__)

SETUPS = ("UC", "VA", "VA_cheat")
METRICS = ("accuracy", "auc", "ece", "log_loss")
ACCURACY_RULES = "accuracy rules: UC score>0.5; VA regularized p>0.5; VA_cheat cheat endpoint>0.5"


def make_trainer(model_kind: str = "forest", **params) -> Callable[[Dataset, int], ScoringModel]:
    """Return ``train(data, seed) -> model`` for a built-in model kind."""
    if model_kind == "forest":
        return lambda data, seed: train_forest(data, seed=seed, **params)
    if model_kind == "tree":
        return lambda data, seed: train_tree(data, seed=seed, **params)
    raise ValueError(f"unknown model kind {model_kind!r}")


def _fold_seed(seed: int, repeat: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, repeat, fold]).generate_state(1)[0])


@dataclass
class FoldResult:
    repeat: int
    fold: int
    values: dict[str, dict[str, float]]


@dataclass
class MetricsReport:
    dataset: str
    model: str
    folds: list[FoldResult] = field(default_factory=list)

    def fold_values(self, setup: str, metric: str) -> np.ndarray:
        return np.array([f.values[setup][metric] for f in self.folds])

    def mean(self, setup: str, metric: str) -> float:
        return float(np.mean(self.fold_values(setup, metric)))

    def std(self, setup: str, metric: str) -> float:
        return float(np.std(self.fold_values(setup, metric)))

    def repeat_means(self, setup: str, metric: str) -> np.ndarray:
        """Mean over the folds of each repeat, in repeat order."""
        reps = sorted({f.repeat for f in self.folds})
        return np.array([np.mean([f.values[setup][metric] for f in self.folds if f.repeat == r])
                         for r in reps])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {ACCURACY_RULES}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "model", "setup", "metric", "mean", "std"])
        for setup in SETUPS:
            for metric in METRICS:
                w.writerow([self.dataset, self.model, setup, metric,
                            f"{self.mean(setup, metric):.6f}", f"{self.std(setup, metric):.6f}"])
        return buf.getvalue()


def _evaluate(probs, labels) -> dict[str, float]:
    return {
        "accuracy": accuracy(probs, labels),
        "auc": auc(probs, labels),
        "ece": ece(probs, labels),
        "log_loss": log_loss(probs, labels),
    }


def run_comparison(data: Dataset, model_kind: str = "forest", k: int = 10, repeats: int = 10,
                   seed: int = 0, *, cal_fraction: float = 1 / 3,
                   model_params: dict | None = None) -> MetricsReport:
    """Compare uncalibrated, Venn-Abers and cheating Venn-Abers probabilities per fold.

    UC trains on the whole training fold and uses raw scores. VA trains on
    the proper part of a stratified split of the training fold, calibrates
    on the rest, and uses the regularized estimate. VA_cheat reuses those
    intervals but takes ``p0`` for class-0 and ``p1`` for class-1 instances.
    """
    train = make_trainer(model_kind, **(model_params or {}))
    report = MetricsReport(data.name, model_kind)
    for fold in stratified_kfold(data, k, repeats, seed):
        try:
            fs = _fold_seed(seed, fold.repeat, fold.fold)
            uc_model = train(fold.train, fs)
            uc = uc_model.score_batch(fold.test.X)

            split = train_cal_split(fold.train, cal_fraction, fs)
            va_model = train(split.proper_training, fs)
            va = FastVennAbers(VennAbersCalibrator(va_model.score_batch(split.calibration.X),
                                                   split.calibration.y))
            intervals = va.query_many(va_model.score_batch(fold.test.X))
            p = np.array([iv.p for iv in intervals])
            cheat = np.array([cheat_endpoint(iv, y) for iv, y in zip(intervals, fold.test.y)])

            y = fold.test.y
            values = {"UC": _evaluate(uc, y), "VA": _evaluate(p, y), "VA_cheat": _evaluate(cheat, y)}
        except Exception as exc:
            raise RuntimeError(f"fold {fold.fold} of repeat {fold.repeat} failed: {exc}") from exc
        report.folds.append(FoldResult(fold.repeat, fold.fold, values))
        logger.debug("repeat %d fold %d: %s", fold.repeat, fold.fold, values)
    return report


@dataclass(frozen=True)
class TimingRow:
    dataset: str
    model: str
    mode: str
    n_instances: int
    seconds: float


def time_explanations(data: Dataset, model_kind: str = "forest", n_instances: int = 10,
                      modes=("factual", "counterfactual"), seed: int = 0, *,
                      cal_fraction: float = 1 / 3, model_params: dict | None = None,
                      model: ScoringModel | None = None) -> list[TimingRow]:
    """Wall-clock seconds to calibrate and explain ``n_instances`` per mode.

    Factual mode uses the binary-entropy discretizer, counterfactual mode the
    entropy discretizer. Model training is outside the timed region; the
    calibrator and discretizer fits are inside it.
    """
    split = train_cal_split(data, cal_fraction, seed)
    if model is None:
        model = make_trainer(model_kind, **(model_params or {}))(split.proper_training, seed)
    X = split.proper_training.X[:n_instances]
    rows = []
    for mode in modes:
        start = time.perf_counter()
        explainer = CalibratedExplainer(model, split.calibration, seed=seed)
        for x in X:
            if mode == "factual":
                explainer.explain_factual(x, "binary_entropy")
            elif mode == "counterfactual":
                explainer.explain_counterfactual(x, "entropy")
            else:
                raise ValueError(f"unknown mode {mode!r}")
        rows.append(TimingRow(data.name, model_kind, mode, len(X), time.perf_counter() - start))
    return rows


def timing_csv(rows: list[TimingRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "model", "mode", "n_instances", "seconds"])
    for r in rows:
        w.writerow([r.dataset, r.model, r.mode, r.n_instances, f"{r.seconds:.6f}"])
    return buf.getvalue()
