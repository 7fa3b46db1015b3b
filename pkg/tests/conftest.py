import time

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def report(request, capsys):
    """Print one PASS/FAIL line for an acceptance criterion and return the verdict."""
    def emit(number: int, ok: bool, detail: str, started: float) -> bool:
        line = (f"[criterion {number}] {'PASS' if ok else 'FAIL'} {detail} "
                f"({time.perf_counter() - started:.1f}s)")
        with capsys.disabled():
            print("\n" + line)
        request.config.stash.setdefault(ACCEPTANCE_LINES, []).append(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
