"""Acceptance criteria 1-13.

Each test records a one-line PASS/FAIL verdict in ``RESULTS``; the conftest
terminal-summary hook prints them after the run.
"""

import itertools
import time
import xml.etree.ElementTree as ET
from fractions import Fraction

import numpy as np
import pytest

from calexp.data import CATEGORICAL, NUMERIC, Dataset, Feature, FeatureSchema, synth_two_class, train_cal_split
from calexp.explainer import CalibratedExplainer, export_json
from calexp.harness import make_trainer, run_comparison, time_explanations
from calexp.metrics import ece, log_loss
from calexp.models import train_forest
from calexp.plots import render
from calexp.venn_abers import FastVennAbers, VennAbersCalibrator, pava_fit, va_interval
from oracles import monotone_lsq, va_bounds

RESULTS: dict[int, str] = {}

SVG_NS = "{http://www.w3.org/2000/svg}"


def verdict(n, title, ok, detail):
    line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


# -- shared fixtures -----------------------------------------------------------

OVERCONFIDENT = {"n_trees": 3, "min_leaf": 5, "max_features": None}


@pytest.fixture(scope="module")
def comparison():
    data = synth_two_class(2000, separation=0.5, seed=0)
    start = time.perf_counter()
    report = run_comparison(data, "forest", k=2, repeats=10, seed=0, model_params=OVERCONFIDENT)
    return report, time.perf_counter() - start


def build_explainer(seed=7):
    data = synth_two_class(900, separation=1.0, seed=seed)
    split = train_cal_split(data, 1 / 3, seed)
    model = train_forest(split.proper_training, n_trees=30, seed=seed)
    return CalibratedExplainer(model, split.calibration, seed=seed), split


@pytest.fixture(scope="module")
def explained():
    """Explainer plus 1000 fresh instances and their factual explanations for both binary discretizers."""
    explainer, split = build_explainer()
    X = synth_two_class(1000, separation=1.0, seed=99).X
    expls = {kind: [explainer.explain_factual(x, kind) for x in X]
             for kind in ("binary_entropy", "binary_median")}
    return explainer, X, expls


# -- criteria ------------------------------------------------------------------

def test_01_pava_oracle_equivalence():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    cases, worst = 0, 0.0
    for length in range(1, 7):
        for targets in itertools.product((0, 1), repeat=length):
            for _ in range(100 if length > 2 else 40):
                scores = rng.choice(1000, size=length, replace=False) / 1000.0
                fit = pava_fit(scores=scores, targets=targets)
                oracle = monotone_lsq(list(scores), list(targets))
                for b, v in zip(fit.breakpoints, fit.values):
                    worst = max(worst, abs(v - oracle[b]))
                cases += 1
    elapsed = time.perf_counter() - start
    verdict(1, "PAVA vs exhaustive monotone least squares", cases >= 5000 and worst <= 1e-9 and elapsed < 30,
            f"{cases} cases, max |diff| {worst:.2e}, {elapsed:.1f}s")


def test_02_va_hand_case():
    cal = VennAbersCalibrator([0.2, 0.3, 0.5, 0.7, 0.8], [0, 1, 0, 1, 1])
    iv = va_interval(cal, 0.6)
    o0, o1 = va_bounds([(0.2, 0), (0.3, 1), (0.5, 0), (0.7, 1), (0.8, 1)], 0.6)
    err = max(abs(iv.p0 - 1 / 3), abs(iv.p1 - 1.0), abs(iv.p - 0.6), abs(o0 - 1 / 3), abs(o1 - 1.0))
    verdict(2, "Venn-Abers hand case", err <= 1e-12,
            f"[{iv.p0:.15f}, {iv.p1:.15f}] p={iv.p:.15f}, max err {err:.1e}")


def test_03_interval_invariants_and_fast_path():
    rng = np.random.default_rng(3)
    cases, breaches, worst = 0, 0, 0.0
    while cases < 10_000:
        m = int(rng.integers(2, 40))
        grid = int(rng.choice([5, 20, 1000]))   # coarse grids force ties
        s = rng.integers(0, grid + 1, m) / grid
        y = rng.integers(0, 2, m)
        y[:2] = [0, 1]
        cal = VennAbersCalibrator(s, y)
        fast = FastVennAbers(cal)
        for q in np.concatenate([rng.integers(0, grid + 1, 5) / grid, rng.random(5)]):
            a, b = va_interval(cal, q), fast.query(q)
            breaches += not (a.p0 <= a.p <= a.p1 and b.p0 <= b.p <= b.p1)
            worst = max(worst, abs(a.p0 - b.p0), abs(a.p1 - b.p1))
            cases += 1
    verdict(3, "interval invariants, fast vs naive", breaches == 0 and worst <= 1e-9,
            f"{cases} cases, {breaches} order breaches, max |fast - naive| {worst:.2e}")


def test_04_calibration_direction(comparison):
    report, elapsed = comparison
    ll = report.repeat_means("VA", "log_loss") < report.repeat_means("UC", "log_loss")
    ec = report.repeat_means("VA", "ece") < report.repeat_means("UC", "ece")
    both = int(np.sum(ll & ec))
    verdict(4, "VA improves log loss and ECE of an overconfident forest", both >= 8 and elapsed < 120,
            f"{both}/10 repeats (log loss {int(ll.sum())}/10, ECE {int(ec.sum())}/10); "
            f"mean log loss UC {report.mean('UC', 'log_loss'):.3f} VA {report.mean('VA', 'log_loss'):.3f}; "
            f"{elapsed:.1f}s")


def test_05_cheat_bound(comparison):
    report, _ = comparison
    ll = report.fold_values("VA_cheat", "log_loss") <= report.fold_values("VA", "log_loss")
    acc = report.fold_values("VA_cheat", "accuracy") >= report.fold_values("VA", "accuracy")
    ok = bool(np.all(ll) and np.all(acc))
    verdict(5, "cheating VA bounds VA on every fold", ok,
            f"log loss held on {int(ll.sum())}/{ll.size} folds, accuracy on {int(acc.sum())}/{acc.size}")


def exact_mean(xs):
    return float(sum(Fraction(x) for x in xs) / len(xs))


def other_group_estimate(explainer, x, j, kind):
    """Calibrated estimate averaged over every perturbation outside the instance's group of feature ``j``."""
    feat = explainer.schema[j]
    if feat.is_categorical:
        values = [float(v) for v in range(len(feat.values)) if v != int(x[j])]
    else:
        (t,) = explainer.discretizer(kind).thresholds[j]
        col = explainer.calibration.X[:, j]
        other = col[col > t] if x[j] <= t else col[col <= t]
        values = list(np.percentile(other, [25, 50, 75])) if other.size >= 3 else list(np.unique(other))
    rows = np.repeat(x[None, :], len(values), axis=0)
    rows[:, j] = values
    ps = [explainer.va.query(s).p for s in explainer.model.score_batch(rows)]
    return exact_mean(ps)


def test_06_weight_identity(explained):
    explainer, X, expls = explained
    checked, mismatches = 0, 0
    for kind, batch in expls.items():
        for x, expl in zip(X, batch):
            p = expl.prediction.p
            for r in expl.rules:
                expected = p - other_group_estimate(explainer, x, r.feature_index, kind)
                mismatches += r.weights.w != expected
                checked += 1
    verdict(6, "w = p - p(other group), bitwise", checked > 0 and mismatches == 0,
            f"{checked} feature weights over {len(X)} instances x {len(expls)} binary discretizers, "
            f"{mismatches} mismatches")


def test_07_weight_interval_order(explained):
    _, _, expls = explained
    total = bad = 0
    for batch in expls.values():
        for expl in batch:
            for r in expl.rules:
                bad += not (r.weights.w1 <= r.weights.w <= r.weights.w0)
                total += 1
    verdict(7, "w1 <= w <= w0", bad == 0, f"{total} weights, {bad} out of order")


def test_08_stability():
    texts = []
    for _ in range(2):
        explainer, split = build_explainer(seed=11)
        run = []
        for x in split.calibration.X[:20]:
            run.append(export_json(explainer.explain_factual(x)))
            run.append(export_json(explainer.explain_counterfactual(x)))
        texts.append(run)
    same = sum(a == b for a, b in zip(*texts))
    verdict(8, "byte-identical JSON across runs", same == len(texts[0]),
            f"{same}/{len(texts[0])} documents identical")


def test_09_rule_robustness():
    explainer, split = build_explainer(seed=5)
    rng = np.random.default_rng(9)
    X = synth_two_class(500, separation=1.0, seed=123).X
    cal = explainer.calibration.X
    changed = 0
    for x in X:
        base = explainer.explain_factual(x)
        disc = explainer.discretizer("binary_entropy")
        y = x.copy()
        for j, feat in enumerate(explainer.schema):
            if feat.is_categorical or not disc.thresholds[j]:
                continue
            t = disc.thresholds[j]
            g = disc.group(j, x[j])
            lo = t[g - 1] if g > 0 else cal[:, j].min() - 1.0
            hi = t[g] if g < len(t) else cal[:, j].max() + 1.0
            v = rng.uniform(lo, hi)
            y[j] = hi if v <= lo else v
        changed += explainer.explain_factual(y).conditions() != base.conditions()
    verdict(9, "factual rule set unchanged under in-group perturbation", changed == 0,
            f"{len(X)} instances, {changed} changed")


def test_10_counterfactual_cardinality():
    rng = np.random.default_rng(10)
    n = 600
    num = rng.uniform(0, 10, n)
    cat = rng.integers(0, 4, n)
    logit = np.where((num > 3) & (num <= 7), 1.5, -1.5) + 0.4 * (cat - 1.5)
    y = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(int)
    schema = FeatureSchema((Feature("num", NUMERIC), Feature("cat", CATEGORICAL, ("a", "b", "c", "d"))))
    data = Dataset(schema, np.column_stack([num, cat]), y)
    split = train_cal_split(data, 1 / 3, 0)
    explainer = CalibratedExplainer(train_forest(split.proper_training, n_trees=30, seed=0), split.calibration)
    t = explainer.discretizer("entropy").thresholds[0]
    mid = 0.5 * (t[0] + t[1])
    expl = explainer.explain_counterfactual([mid, 2], "entropy", max_rules=None)
    per = {f: sum(r.feature == f for r in expl.rules) for f in ("cat", "num")}
    ok = len(t) >= 2 and len(expl.rules) == 5 and per == {"cat": 3, "num": 2}
    verdict(10, "counterfactual rule count 3 + 2", ok,
            f"thresholds {[round(v, 3) for v in t]}, instance num={mid:.3f}; {per['cat']} categorical + "
            f"{per['num']} numeric = {len(expl.rules)} rules")


def test_11_timing():
    rng = np.random.default_rng(11)
    n = 768
    X = np.column_stack([rng.poisson(4, n), rng.normal(120, 30, n), rng.normal(70, 12, n), rng.normal(20, 10, n),
                         rng.gamma(2, 40, n), rng.normal(32, 7, n), rng.gamma(2, 0.25, n), rng.integers(21, 80, n)])
    z = 0.03 * (X[:, 1] - 120) + 0.08 * (X[:, 5] - 32) + 0.15 * (X[:, 0] - 4) + rng.normal(0, 1, n)
    y = (z > 0.6).astype(int)
    schema = FeatureSchema(tuple(Feature(f"f{i}", NUMERIC) for i in range(8)))
    data = Dataset(schema, X.astype(float), y, name="timing768")
    split = train_cal_split(data, 200 / 768, 0)
    assert split.calibration.n == 200
    model = make_trainer("forest")(split.proper_training, 0)
    # best of three repetitions damps scheduler noise
    best = {"factual": np.inf, "counterfactual": np.inf}
    for _ in range(3):
        for row in time_explanations(data, "forest", 10, seed=0, cal_fraction=200 / 768, model=model):
            best[row.mode] = min(best[row.mode], row.seconds)
    ratio = best["counterfactual"] / best["factual"]
    verdict(11, "explanation timing", best["factual"] < 5.0 and ratio <= 2.0,
            f"factual {best['factual']:.3f}s for 10 instances, counterfactual {best['counterfactual']:.3f}s, "
            f"ratio {ratio:.2f}")


def test_12_metric_hand_cases():
    checks = {
        "ece two-bin": (ece([0.05] * 4 + [0.95] * 4, [0, 0, 0, 1, 1, 1, 1, 0]), 0.2),
        "ece perfect": (ece([0.65] * 20, [1] * 13 + [0] * 7), 0.0),
        "ece all wrong": (ece([0.9] * 5, [0] * 5), 0.9),
        "log loss coin": (log_loss([0.5] * 6, [0, 1, 0, 1, 1, 0]), 1.0),
        "log loss 0.25": (log_loss([0.25], [1]), 2.0),
        "log loss clipped": (log_loss([1.0], [1]), float(-np.log2(1 - 1e-15))),
    }
    worst = max(abs(got - want) for got, want in checks.values())
    verdict(12, "metric hand examples", worst <= 1e-12,
            f"{len(checks)} cases, max |diff| {worst:.1e}")


def test_13_rendering():
    docs = []
    for _ in range(2):
        explainer, split = build_explainer(seed=13)
        x = split.calibration.X[4]
        fact = explainer.explain_factual(x)
        cf = explainer.explain_counterfactual(x, max_rules=None)
        docs.append({
            "regular": (render(fact, "regular"), len(fact.rules)),
            "uncertainty": (render(fact, "uncertainty"), len(fact.rules)),
            "counterfactual": (render(cf, "counterfactual", 10), min(len(cf.rules), 10)),
        })
    problems = []
    for kind, (svg, expected) in docs[0].items():
        root = ET.fromstring(svg.encode())
        got = sum(1 for g in root.iter(f"{SVG_NS}g") if g.get("class") == "rule")
        if got != expected:
            problems.append(f"{kind} has {got} rules, expected {expected}")
        if svg != docs[1][kind][0]:
            problems.append(f"{kind} bytes differ")
    counts = ", ".join(f"{k} {v[1]}" for k, v in docs[0].items())
    verdict(13, "SVG rendering", not problems, "; ".join(problems) or f"parsed and byte-stable ({counts} rules)")
