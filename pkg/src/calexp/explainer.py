"""Calibrated factual and counterfactual feature-importance explanations.

The weight of a feature is how far the calibrated estimate for class 1 moves
when the feature's value is replaced by values from the other groups of that
feature::

    w  = p - mean(p  of alternative groups)
    w0 = p - mean(p0 of alternative groups)
    w1 = p - mean(p1 of alternative groups)

Categorical features are perturbed to every other category; numeric features
to the 25th/50th/75th percentiles of the calibration values inside the groups
bounded by the discretizer thresholds around the instance value.
"""

from __future__ import annotations

import hashlib
import json
import math
import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, FeatureSchema
from .discretizers import Discretizer, fit_discretizer
from .models import ScoringModel
from .venn_abers import FastVennAbers, ProbabilityInterval, VennAbersCalibrator, va_interval

__all__ = [
    "PerturbationGroup",
    "GroupOutcome",
    "FeatureWeights",
    "Rule",
    "Explanation",
    "CalibratedExplainer",
    "build_groups",
    "perturb_and_calibrate",
    "group_outcome",
    "feature_weight",
    "export_json",
    "export_lime_shape",
    "export_shap_shape",
    "load_json",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = "ce/1"
FACTUAL = "factual"
COUNTERFACTUAL = "counterfactual"
_INF = math.inf


@dataclass(frozen=True)
class PerturbationGroup:
    """Values of one feature that a perturbation may move the instance into.

    Categorical groups cover a single category; numeric groups cover the
    half-open range ``(lower, upper]``.
    """

    feature: int
    kind: str
    representatives: tuple[float, ...]
    is_instance_group: bool
    category: int | None = None
    lower: float = -_INF
    upper: float = _INF

    def covers(self, value: float) -> bool:
        if self.category is not None:
            return int(value) == self.category
        return self.lower < value <= self.upper


@dataclass(frozen=True)
class GroupOutcome:
    group: PerturbationGroup
    interval: ProbabilityInterval


@dataclass(frozen=True)
class FeatureWeights:
    w: float
    w0: float
    w1: float

    @property
    def low(self) -> float:
        return min(self.w0, self.w1)

    @property
    def high(self) -> float:
        return max(self.w0, self.w1)


@dataclass(frozen=True)
class Rule:
    """A factual or counterfactual condition on one feature.

    ``op`` is one of ``"<="``, ``">"``, ``"="`` or ``"in"`` (the latter with an
    operand ``[lower, upper]`` meaning ``lower < f <= upper``). ``expected``
    is the averaged interval of the group the condition describes and is
    only set for counterfactual rules.
    """

    feature: str
    feature_index: int
    op: str
    operand: object
    condition: str
    instance_value: object
    weights: FeatureWeights
    expected: ProbabilityInterval | None = None

    @property
    def impact(self) -> float:
        return abs(self.weights.w)

    def key(self) -> tuple:
        operand = tuple(self.operand) if isinstance(self.operand, list) else self.operand
        return (self.feature_index, self.op, operand)


@dataclass(frozen=True)
class Explanation:
    prediction: ProbabilityInterval
    mode: str
    rules: tuple[Rule, ...]
    instance: tuple
    features: tuple[str, ...]
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _explanation_dict(self)

    def to_json(self) -> str:
        return export_json(self)

    def conditions(self) -> set[tuple]:
        return {r.key() for r in self.rules}


def _fmt(t: float) -> str:
    return f"{t:.6g}"


def _render(name: str, op: str, operand) -> str:
    if op == "in":
        return f"{_fmt(operand[0])} < {name} <= {_fmt(operand[1])}"
    if op == "=":
        return f"{name} = {operand}"
    return f"{name} {op} {_fmt(operand)}"


def _representatives(vals: np.ndarray) -> tuple[float, ...]:
    if vals.size >= 3:
        return tuple(float(v) for v in np.percentile(vals, [25.0, 50.0, 75.0]))
    return tuple(float(v) for v in np.unique(vals))


def build_groups(feature: int, instance_value: float, discretizer: Discretizer,
                 calibration: Dataset) -> list[PerturbationGroup]:
    """Perturbation groups for one feature.

    Categorical features get one group per schema value. Numeric features get
    the instance's group plus the groups below and/or above it, bounded by the
    nearest surrounding thresholds. Alternative numeric groups without
    calibration values are dropped. Fewer than two groups means the feature
    cannot be explained.
    """
    feat = calibration.schema[feature]
    if feat.is_categorical:
        own = int(instance_value)
        return [PerturbationGroup(feature, feat.kind, (float(v),), v == own, category=v)
                for v in range(len(feat.values))]

    thresholds = discretizer.thresholds.get(feature, ())
    if not thresholds:
        return []
    col = calibration.X[:, feature]
    g = discretizer.group(feature, instance_value)
    lo = thresholds[g - 1] if g > 0 else -_INF
    hi = thresholds[g] if g < len(thresholds) else _INF
    spans = [(lo, hi, True)]
    if g > 0:
        spans.insert(0, (-_INF, lo, False))
    if g < len(thresholds):
        spans.append((hi, _INF, False))
    groups = []
    for a, b, own in spans:
        vals = col[(col > a) & (col <= b)]
        if not own and vals.size == 0:
            continue
        groups.append(PerturbationGroup(feature, feat.kind, _representatives(vals), own, lower=a, upper=b))
    if len(groups) < 2:
        return []
    return groups


def perturb_and_calibrate(model: ScoringModel, va, instance, feature: int,
                          replacement: float) -> ProbabilityInterval:
    """Calibrated interval of ``instance`` with one feature replaced."""
    x = np.array(instance, dtype=float)
    x[feature] = replacement
    return _query(va, model.score(x))


def _query(va, score: float) -> ProbabilityInterval:
    if isinstance(va, FastVennAbers):
        return va.query(score)
    return va_interval(va, score)


def _mean(xs: Sequence[float]) -> float:
    # exact mean rounded once: identical inputs give that value back, and order is preserved
    return statistics.mean(xs)


def group_outcome(group: PerturbationGroup, intervals: Sequence[ProbabilityInterval]) -> GroupOutcome:
    """Average the representatives' intervals component-wise."""
    if not intervals:
        raise ValueError("group_outcome needs at least one interval")
    return GroupOutcome(group, ProbabilityInterval(
        _mean([iv.p0 for iv in intervals]),
        _mean([iv.p1 for iv in intervals]),
        _mean([iv.p for iv in intervals]),
    ))


def feature_weight(p: float, outcomes: Sequence[GroupOutcome], instance_group: int | None = None) -> FeatureWeights:
    """Weights of ``p`` against the mean outcome of every group except ``instance_group``."""
    others = [o.interval for i, o in enumerate(outcomes) if i != instance_group]
    if not others:
        raise ValueError("feature_weight needs at least one alternative group")
    return FeatureWeights(
        p - _mean([iv.p for iv in others]),
        p - _mean([iv.p0 for iv in others]),
        p - _mean([iv.p1 for iv in others]),
    )


def _model_id(model: ScoringModel) -> str:
    to_dict = getattr(model, "to_dict", None)
    if to_dict is None:
        return f"{model.kind}"
    digest = hashlib.sha256(json.dumps(to_dict(), sort_keys=True).encode()).hexdigest()[:16]
    return f"{model.kind}:{digest}"


class CalibratedExplainer:
    """Calibrates ``model`` on ``calibration`` and explains single instances.

    Parameters
    ----------
    model : ScoringModel
        Underlying classifier, trained on a proper training set disjoint
        from ``calibration``.
    calibration : Dataset
        Calibration set; fits both the Venn-Abers calibrator and the
        discretizers.
    entropy_depth : int
        Tree depth of the ``entropy`` discretizer.
    seed : int
        Recorded in provenance; the method itself is deterministic.
    fast : bool
        Use the build-once Venn-Abers structure instead of refitting per query.
    """

    def __init__(self, model: ScoringModel, calibration: Dataset, *, entropy_depth: int = 3,
                 seed: int = 0, fast: bool = True):
        self.model = model
        self.calibration = calibration
        self.entropy_depth = entropy_depth
        self.seed = seed
        self.calibrator = VennAbersCalibrator(model.score_batch(calibration.X), calibration.y)
        self.va = FastVennAbers(self.calibrator) if fast else self.calibrator
        self._discretizers: dict[str, Discretizer] = {}
        self._provenance = {
            "model": _model_id(model),
            "calibration": calibration.fingerprint(),
            "calibration_size": calibration.n,
            "seed": seed,
        }

    @property
    def schema(self) -> FeatureSchema:
        return self.calibration.schema

    def discretizer(self, kind: str) -> Discretizer:
        kind = kind.replace("-", "_")
        if kind not in self._discretizers:
            self._discretizers[kind] = fit_discretizer(kind, self.calibration, self.entropy_depth)
        return self._discretizers[kind]

    def interval(self, instance) -> ProbabilityInterval:
        return _query(self.va, self.model.score(instance))

    def predict_intervals(self, X) -> list[ProbabilityInterval]:
        return [_query(self.va, s) for s in self.model.score_batch(X)]

    def _outcomes(self, x: np.ndarray, disc: Discretizer):
        """Per explainable feature: (groups, outcomes of the alternative groups)."""
        plan = []
        rows = []
        for j in range(len(self.schema)):
            groups = build_groups(j, x[j], disc, self.calibration)
            if not groups:
                continue
            alternatives = [g for g in groups if not g.is_instance_group]
            spans = []
            for g in alternatives:
                start = len(rows)
                for r in g.representatives:
                    row = x.copy()
                    row[j] = r
                    rows.append(row)
                spans.append((g, start, len(rows)))
            plan.append((j, groups, spans))
        scores = self.model.score_batch(np.array(rows)) if rows else np.empty(0)
        intervals = [_query(self.va, s) for s in scores]
        result = []
        for j, groups, spans in plan:
            outs = [group_outcome(g, intervals[a:b]) for g, a, b in spans]
            result.append((j, groups, outs))
        return result

    def _prepare(self, instance):
        x = np.asarray(instance, dtype=float).ravel()
        self.schema.validate_rows(x.reshape(1, -1))
        return x, self.interval(x)

    def _value(self, j: int, v: float):
        feat = self.schema[j]
        return feat.values[int(v)] if feat.is_categorical else float(v)

    def _finish(self, x, pred, mode, rules, kind) -> Explanation:
        return Explanation(
            prediction=pred,
            mode=mode,
            rules=tuple(rules),
            instance=tuple(self._value(j, v) for j, v in enumerate(x)),
            features=tuple(self.schema.names),
            provenance={**self._provenance, "discretizer": kind},
        )

    def explain_factual(self, instance, discretizer: str = "binary_entropy") -> Explanation:
        """One rule per explainable feature, ordered by ``|w|`` descending then feature index."""
        disc = self.discretizer(discretizer)
        x, pred = self._prepare(instance)
        rules = []
        for j, groups, outs in self._outcomes(x, disc):
            weights = feature_weight(pred.p, outs)
            own = next(g for g in groups if g.is_instance_group)
            name = self.schema[j].name
            if own.category is not None:
                op, operand = "=", self.schema[j].values[own.category]
            elif own.lower == -_INF:
                op, operand = "<=", own.upper
            elif own.upper == _INF:
                op, operand = ">", own.lower
            else:
                op, operand = "in", [own.lower, own.upper]
            rules.append(Rule(name, j, op, operand, _render(name, op, operand), self._value(j, x[j]), weights))
        rules.sort(key=lambda r: (-r.impact, r.feature_index))
        return self._finish(x, pred, FACTUAL, rules, disc.kind)

    def explain_counterfactual(self, instance, discretizer: str = "entropy", max_rules: int | None = 10) -> Explanation:
        """One rule per alternative group, ranked by ``|p - p_group|``, truncated to ``max_rules``."""
        disc = self.discretizer(discretizer)
        x, pred = self._prepare(instance)
        rules = []
        for j, _, outs in self._outcomes(x, disc):
            name = self.schema[j].name
            for out in outs:
                g = out.group
                if g.category is not None:
                    op, operand = "=", self.schema[j].values[g.category]
                elif g.lower == -_INF:
                    op, operand = "<=", g.upper
                else:
                    op, operand = ">", g.lower
                rules.append(Rule(name, j, op, operand, _render(name, op, operand), self._value(j, x[j]),
                                  feature_weight(pred.p, [out]), out.interval))
        rules.sort(key=lambda r: (-r.impact, r.feature_index, r.condition))
        if max_rules is not None:
            rules = rules[:max_rules]
        return self._finish(x, pred, COUNTERFACTUAL, rules, disc.kind)


# -- export -------------------------------------------------------------------

def _r(x: float) -> float:
    # json writes the shortest repr, which is deterministic and round-trips exactly
    return float(x)


def _num(v):
    if isinstance(v, float):
        return _r(v)
    if isinstance(v, list):
        return [_num(u) for u in v]
    return v


def _interval_dict(iv: ProbabilityInterval) -> dict:
    return {"p": _r(iv.p), "low": _r(iv.p0), "high": _r(iv.p1)}


def _explanation_dict(expl: Explanation) -> dict:
    rules = []
    for r in expl.rules:
        d = {
            "feature": r.feature,
            "feature_index": r.feature_index,
            "op": r.op,
            "operand": _num(r.operand),
            "condition": r.condition,
            "instance_value": _num(r.instance_value),
            "weight": {"w": _r(r.weights.w), "w_low": _r(r.weights.low), "w_high": _r(r.weights.high)},
        }
        if r.expected is not None:
            d["expected"] = _interval_dict(r.expected)
        rules.append(d)
    return {
        "schema": SCHEMA_VERSION,
        "mode": expl.mode,
        "prediction": _interval_dict(expl.prediction),
        "features": list(expl.features),
        "instance": [_num(v) for v in expl.instance],
        "rules": rules,
        "provenance": expl.provenance,
    }


def export_json(expl: Explanation) -> str:
    """Canonical ce/1 JSON: sorted keys, two-space indent, reals written exactly."""
    return json.dumps(_explanation_dict(expl), sort_keys=True, indent=2, allow_nan=False) + "\n"


def load_json(text: str) -> Explanation:
    d = json.loads(text)
    if d.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported explanation schema {d.get('schema')!r}")

    def interval(e):
        return ProbabilityInterval(e["low"], e["high"], e["p"])

    rules = []
    for r in d["rules"]:
        wt = r["weight"]
        rules.append(Rule(
            r["feature"], r["feature_index"], r["op"], r["operand"], r["condition"], r["instance_value"],
            # w1 <= w0 always, so the low bound is w1
            FeatureWeights(wt["w"], wt["w_high"], wt["w_low"]),
            interval(r["expected"]) if "expected" in r else None,
        ))
    return Explanation(interval(d["prediction"]), d["mode"], tuple(rules), tuple(d["instance"]),
                       tuple(d["features"]), d.get("provenance", {}))


def export_lime_shape(expl: Explanation) -> str:
    """``[[condition, w], ...]`` in rule order, like LIME's ``as_list``."""
    return json.dumps([[r.condition, _r(r.weights.w)] for r in expl.rules])


def export_shap_shape(expl: Explanation) -> str:
    """Per-feature weight vector plus the calibrated prediction.

    The weights are NOT Shapley values: each one is measured against the
    feature's own alternatives, so they do not sum to ``p`` minus any base
    value. Features without a rule get weight 0.
    """
    values = [0.0] * len(expl.features)
    if expl.mode == FACTUAL:
        for r in expl.rules:
            values[r.feature_index] = _r(r.weights.w)
    return json.dumps({
        "feature_names": list(expl.features),
        "values": values,
        "data": [_num(v) for v in expl.instance],
        "prediction": _r(expl.prediction.p),
        "additive": False,
    }, sort_keys=True)
