import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "volterrajump",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("volterrajump")

_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    start = time.perf_counter()
    lines = request.config.stash.setdefault(_VERDICTS, {})

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail} ({time.perf_counter() - start:.1f} s)"
        lines[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
