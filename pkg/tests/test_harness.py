import csv
import io

import numpy as np
import pytest

from calexp.data import stratified_kfold, synth_two_class, train_cal_split
from calexp.harness import (
    METRICS,
    SETUPS,
    _fold_seed,
    make_trainer,
    run_comparison,
    time_explanations,
    timing_csv,
)
from calexp.metrics import log_loss
from calexp.venn_abers import VennAbersCalibrator, va_interval

SMALL = {"n_trees": 5, "max_depth": 4}


@pytest.fixture(scope="module")
def small_report():
    data = synth_two_class(200, seed=1)
    return data, run_comparison(data, "forest", k=3, repeats=2, seed=5, model_params=SMALL)


class TestRunComparison:
    def test_shape(self, small_report):
        _, report = small_report
        assert len(report.folds) == 6
        for f in report.folds:
            assert set(f.values) == set(SETUPS)
            for setup in SETUPS:
                assert set(f.values[setup]) == set(METRICS)
        assert report.repeat_means("VA", "ece").shape == (2,)

    def test_deterministic(self, small_report):
        data, report = small_report
        again = run_comparison(data, "forest", k=3, repeats=2, seed=5, model_params=SMALL)
        assert again.to_csv() == report.to_csv()

    def test_first_fold_recomputed(self, small_report):
        data, report = small_report
        fold = stratified_kfold(data, 3, 2, 5)[0]
        fs = _fold_seed(5, 0, 0)
        train = make_trainer("forest", **SMALL)
        uc = train(fold.train, fs).score_batch(fold.test.X)
        split = train_cal_split(fold.train, 1 / 3, fs)
        model = train(split.proper_training, fs)
        cal = VennAbersCalibrator(model.score_batch(split.calibration.X), split.calibration.y)
        p = [va_interval(cal, s).p for s in model.score_batch(fold.test.X)]
        got = report.folds[0].values
        assert got["UC"]["log_loss"] == pytest.approx(log_loss(uc, fold.test.y), abs=1e-12)
        assert got["VA"]["log_loss"] == pytest.approx(log_loss(p, fold.test.y), abs=1e-9)

    def test_cheat_bound(self, small_report):
        _, report = small_report
        np.testing.assert_array_less(report.fold_values("VA_cheat", "log_loss"),
                                     report.fold_values("VA", "log_loss") + 1e-12)
        assert np.all(report.fold_values("VA_cheat", "accuracy") >= report.fold_values("VA", "accuracy"))

    def test_csv(self, small_report):
        _, report = small_report
        text = report.to_csv()
        assert text.startswith("# accuracy rules:")
        rows = list(csv.DictReader(io.StringIO(text.split("\n", 1)[1])))
        assert len(rows) == len(SETUPS) * len(METRICS)
        assert {r["setup"] for r in rows} == set(SETUPS)
        assert float(rows[0]["mean"]) == pytest.approx(report.mean(rows[0]["setup"], rows[0]["metric"]), abs=1e-6)

    def test_tree_model(self):
        data = synth_two_class(120, seed=2)
        report = run_comparison(data, "tree", k=2, repeats=1, model_params={"max_depth": 3})
        assert len(report.folds) == 2

    def test_unknown_model(self):
        with pytest.raises(ValueError):
            make_trainer("svm")


class TestTiming:
    def test_rows(self):
        data = synth_two_class(150, seed=3)
        rows = time_explanations(data, "forest", 3, model_params=SMALL)
        assert [r.mode for r in rows] == ["factual", "counterfactual"]
        assert all(r.seconds > 0 and r.n_instances == 3 for r in rows)
        lines = timing_csv(rows).splitlines()
        assert lines[0] == "dataset,model,mode,n_instances,seconds"
        assert len(lines) == 3

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            time_explanations(synth_two_class(60), "tree", 1, modes=("both",))
