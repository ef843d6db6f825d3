import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_feasible_qp(rng, n, r, ridge=0.5):
    """Strictly convex QP with a strictly feasible point (returns Q, q, G, h)."""
    M = rng.normal(size=(n, n))
    G = rng.normal(size=(r, n))
    h = G @ rng.normal(size=n) + np.abs(rng.normal(size=r)) + 0.05
    return M @ M.T + ridge * np.eye(n), rng.normal(size=n), G, h


# acceptance-criterion lines, filled by test_acceptance.py and printed at the end
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
