import numpy as np
import pytest

from hazshift.data import Dataset
from hazshift.simlab import MAIN, generate


def random_dataset(rng, n, d, tau=2.0, ties=False, censor_frac=0.3):
    """Small dataset with distinct event times (unless ``ties``) and
    administrative censoring at ``tau``."""
    x = rng.normal(size=(n, d))
    if ties:
        t = rng.integers(1, 4, size=n) * 0.4
    else:
        t = rng.uniform(0.05, 0.95 * tau, size=n)
    delta = (rng.uniform(size=n) > censor_frac).astype(int)
    delta[0] = 1
    t = np.where(delta == 1, t, tau)
    return Dataset(y=rng.normal(size=n), t_obs=t, delta=delta, covariates=x,
                   tau=tau)


@pytest.fixture
def rng():
    return np.random.default_rng(20241019)


@pytest.fixture(scope="session")
def main_5000():
    return generate(MAIN, 5000, 2025)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS, key=str):
        terminalreporter.write_line(mod.RESULTS[key])
