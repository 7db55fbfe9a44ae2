import os
import sys
from contextlib import contextmanager

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# Criterion number -> (passed, title, detail); filled by the ``criterion`` fixture.
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    @contextmanager
    def record(number, title):
        details = []
        try:
            yield details
        except BaseException:
            ACCEPTANCE[number] = (False, title, "; ".join(details))
            print(f"criterion {number:2d}: FAIL  {title}")
            raise
        ACCEPTANCE[number] = (True, title, "; ".join(details))
        print(f"criterion {number:2d}: PASS  {title}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {title}")
        if detail:
            terminalreporter.write_line(f"               {detail}")
