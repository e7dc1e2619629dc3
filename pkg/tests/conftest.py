from pathlib import Path

import numpy as np
import pytest

from metareg import DesignMatrix, RegressionProblem, TauPrior, fit
from metareg.io import parse_design, read_study_csv

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def crins_table():
    return read_study_csv(DATA / "crins.csv", "precomputed")


@pytest.fixture(scope="session")
def crins_problem(crins_table):
    X = parse_design("group_means:IL2RA", crins_table)
    return RegressionProblem(crins_table.dataset, X, TauPrior.half_normal(0.5))


@pytest.fixture(scope="session")
def crins_fit(crins_problem):
    return fit(crins_problem)


@pytest.fixture(scope="session")
def crins_intercept_fit(crins_table):
    return fit(RegressionProblem(crins_table.dataset, None, TauPrior.half_normal(0.5)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_problem(rng, k=None, d=None, proper=None):
    from metareg import NormalPrior, StudyDataset

    k = int(rng.integers(3, 9)) if k is None else k
    d = int(rng.integers(1, 4)) if d is None else d
    d = min(d, k - 1)
    y = rng.normal(0.0, 1.0, k)
    sigma = rng.uniform(0.2, 1.0, k)
    X = np.column_stack([np.ones(k)] + [rng.normal(0, 1, k) for _ in range(d - 1)])
    ds = StudyDataset([f"s{i}" for i in range(k)], y, sigma)
    proper = bool(rng.integers(0, 2)) if proper is None else proper
    if proper:
        beta = NormalPrior.from_sd(rng.normal(0, 0.5, d), rng.uniform(0.5, 3.0, d))
        tau = [TauPrior.half_normal(0.5), TauPrior.half_cauchy(0.5), TauPrior.exponential(2.0)][
            int(rng.integers(0, 3))
        ]
    else:
        from metareg import ImproperUniform

        beta = ImproperUniform()
        tau = TauPrior.half_normal(float(rng.uniform(0.3, 1.0)))
        if k >= d + 3 and rng.random() < 0.3:
            tau = TauPrior.uniform()
    return RegressionProblem(ds, DesignMatrix(X, [f"b{j}" for j in range(d)]), tau, beta)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        verdict, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {detail}")
