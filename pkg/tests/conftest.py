import sys
from pathlib import Path

import numpy as np
import pytest

from calexp.data import CATEGORICAL, NUMERIC, Dataset, Feature, FeatureSchema, synth_two_class, train_cal_split
from calexp.explainer import CalibratedExplainer
from calexp.models import train_forest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def synth():
    return synth_two_class(600, separation=1.0, seed=3)


@pytest.fixture(scope="session")
def split(synth):
    return train_cal_split(synth, 1 / 3, seed=3)


@pytest.fixture(scope="session")
def forest(split):
    return train_forest(split.proper_training, n_trees=30, seed=3)


@pytest.fixture(scope="session")
def explainer(forest, split):
    return CalibratedExplainer(forest, split.calibration, seed=3)


@pytest.fixture
def mixed_schema():
    return FeatureSchema((
        Feature("num", NUMERIC),
        Feature("cat", CATEGORICAL, ("a", "b", "c", "d")),
    ))


def make_dataset(schema, X, y, name="t"):
    return Dataset(schema, np.asarray(X, dtype=float), np.asarray(y), name=name)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
