import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dataset(rng, n_rows=200, d=3, frac=0.4, outcome=None):
    from ssaipw.model import Dataset

    cov = rng.standard_normal((n_rows, d))
    p = 1 / (1 + np.exp(-(np.log(frac / (1 - frac)) + 0.5 * cov[:, 0])))
    r = (rng.random(n_rows) < p).astype(int)
    r[:2] = (1, 0)
    y = cov @ np.linspace(0.5, -0.3, d) + 0.3 * cov[:, 0] ** 2 + rng.standard_normal(n_rows) * 0.5
    if outcome == "binary":
        y = (rng.random(n_rows) < 1 / (1 + np.exp(-y))).astype(float)
    return Dataset.from_covariates(cov, np.where(r == 1, y, np.nan), r)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[k])
