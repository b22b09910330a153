import numpy as np
import pytest

from agepredict.domain import Dataset, ScalingState
from agepredict.featurize import build_dataset, build_vocabulary
from agepredict.synth import GeneratorParams, generate_cohort


def make_dataset(X, y, names=None, state=ScalingState.RAW, params=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = names or tuple(f"x{j}" for j in range(X.shape[1]))
    return Dataset(X, np.asarray(y, dtype=float), tuple(names), state, params)


def well_conditioned(n=50, p=5, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    theta = rng.normal(size=p) * 3
    y = X @ theta + 1.5 + noise * rng.normal(size=n)
    return X, y, theta


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(400, 11, GeneratorParams())


@pytest.fixture(scope="session")
def small_dataset(small_cohort):
    vocab = build_vocabulary(small_cohort.index)
    return build_dataset(small_cohort.users, small_cohort.index, vocab), vocab


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
