import numpy as np
import pytest

from lorenzrt.cells import PartitionConfig
from lorenzrt.driver import OmegaSequence, sample_omega
from lorenzrt.maps import FamilyRange
from lorenzrt.returns import FullReturnConfig, default_t_star

RANDOM_RANGE = FamilyRange(0.55, 0.95)


@pytest.fixture(scope="session")
def pcfg():
    return PartitionConfig(r0=3, r_star=6, alpha=0.6)


@pytest.fixture(scope="session")
def calib():
    return OmegaSequence.constant(1.0, 400, 200)


@pytest.fixture(scope="session")
def calib_frc(pcfg, calib):
    return FullReturnConfig.default(pcfg, t_star=default_t_star([calib], pcfg.delta / 10))


@pytest.fixture(scope="session")
def random_omegas():
    return [sample_omega(s, 200, 400, RANDOM_RANGE) for s in range(3)]


@pytest.fixture(scope="session")
def random_frc(pcfg, random_omegas):
    return FullReturnConfig.default(pcfg, t_star=default_t_star(random_omegas, pcfg.delta / 10))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
