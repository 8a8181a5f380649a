import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def unit1():
    from spdefd.grid import StencilSet

    return StencilSet.unit(1)


def pts(*xs):
    return np.array(xs, dtype=float).reshape(-1, 1)


@pytest.fixture
def record(request):
    """Collects one summary line per acceptance criterion."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def add(n, passed, detail):
        line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
