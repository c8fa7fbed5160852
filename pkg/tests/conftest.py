import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qrse_priors.core import EquilibriumParams, Grid  # noqa: E402
from qrse_priors.equilibrium import EquilibriumModel  # noqa: E402
from qrse_priors.fitting import build_empirical, fit, sample_from_model  # noqa: E402

TRUTH = EquilibriumParams(T=1.0, mu=0.5, rho=4.0, gamma=-0.2)


@pytest.fixture(scope="session")
def truth_model():
    return EquilibriumModel.build(TRUTH, Grid.uniform(-10.0, 10.0, 2001))


@pytest.fixture(scope="session")
def synthetic_samples(truth_model):
    return sample_from_model(truth_model, 50_000, seed=7)


@pytest.fixture(scope="session")
def synthetic_emp(synthetic_samples):
    return build_empirical(synthetic_samples, bins=100)


@pytest.fixture(scope="session")
def synthetic_fit(synthetic_emp):
    return fit(synthetic_emp)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
