import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from glelab.kernels import SumExpKernel, make_powerlaw_kernel

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def single_mode():
    return SumExpKernel.from_modes([[1.0, 1.0]])


@pytest.fixture
def powerlaw4():
    k = make_powerlaw_kernel(1.0, 2.0, 0.0356)
    assert k.M == 4
    return k


def zeta_oracle(s: float, n_terms: int = 10**6) -> float:
    """Partial sum of l^-s plus the integral tail estimate, computed independently of the package."""
    ell = np.arange(1, n_terms + 1, dtype=float)
    partial = float(np.sum(ell[::-1] ** (-s)))
    return partial + n_terms ** (1.0 - s) / (s - 1.0) - 0.5 * n_terms ** (-s)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for i in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[i])
