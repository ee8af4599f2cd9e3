import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def central_difference(f, x, h=1e-3):
    """Fourth-order central finite-difference gradient of a scalar function.

    The five-point stencil keeps truncation error near ``h**4`` while the
    comparatively large ``h`` keeps rounding noise from log densities of
    magnitude ~1e3 well below 1e-6.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (f(x - 2 * step) - 8 * f(x - step) + 8 * f(x + step) - f(x + 2 * step)) / (12 * h)
    return grad


def two_point_difference(f, x, h=1e-5):
    """Classic second-order central difference."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (f(x + step) - f(x - step)) / (2.0 * h)
    return grad


def relative_error(a, b):
    """Per-coordinate relative error with a floor of 1 on the scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for key in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(key, []):
            props = dict(getattr(report, "user_properties", []))
            if "criterion" not in props or report.when not in ("call", "setup"):
                continue
            if report.when == "setup" and report.passed:
                continue
            status = {"passed": "PASS", "failed": "FAIL"}.get(report.outcome, report.outcome.upper())
            lines.append((props["criterion"], f"criterion {props['criterion']:>2}: {status}  "
                                              f"{props.get('detail', '')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
