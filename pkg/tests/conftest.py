import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_psd(rng, n, extra=2, batch=()):
    A = crandn(rng, *batch, n, n + extra)
    return A @ np.conj(np.swapaxes(A, -1, -2)) / (n + extra)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def report(label, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {label}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: _order(s)):
            terminalreporter.write_line(line)


def _order(line):
    label = line.split("criterion ", 1)[1].split(":", 1)[0]
    digits = "".join(ch for ch in label if ch.isdigit())
    return int(digits), label
