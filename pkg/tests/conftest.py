from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, str] = {}


def report(criterion: int, ok: bool, detail: str) -> None:
    """One greppable line per acceptance criterion."""
    line = f"CRITERION {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    _CRITERIA[criterion] = line
    print("\n" + line)


def pytest_terminal_summary(terminalreporter):
    # captured prints are hidden without -s, so repeat the lines at the end
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
