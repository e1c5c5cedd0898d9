import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from xck.kernels import builtin_constant, builtin_polynomial_decay, builtin_two_rate

settings.register_profile("xck", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("xck")


@pytest.fixture
def two_rate():
    return builtin_two_rate(1, 3)


@pytest.fixture
def poly_decay():
    return builtin_polynomial_decay(0.5, 4)


@pytest.fixture
def unit_kernel():
    return builtin_constant(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            for name, value in getattr(rep, "user_properties", []):
                if name == "criterion":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
