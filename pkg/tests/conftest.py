import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ldrk",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ldrk")


def central_difference(fun, Z, h=1e-5):
    """Entrywise central finite-difference gradient of a scalar function."""
    Z = np.array(Z, dtype=np.float64)
    G = np.zeros_like(Z)
    for idx in np.ndindex(*Z.shape):
        Zp = Z.copy()
        Zm = Z.copy()
        Zp[idx] += h
        Zm[idx] -= h
        G[idx] = (fun(Zp) - fun(Zm)) / (2 * h)
    return G


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    denom = max(np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def unit_columns(rng, d, n):
    Z = rng.standard_normal((d, n))
    return Z / np.linalg.norm(Z, axis=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
