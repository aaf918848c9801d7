import os

import pytest
from hypothesis import settings

from impactcal.taq import TickRecord

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

NAN = float("nan")


def tick(ts, price=10.0, volume=100.0, bid=NAN, ask=NAN, bid_size=NAN, ask_size=NAN):
    return TickRecord(ts, price, volume, ask, bid, ask_size, bid_size)


@pytest.fixture
def make_tick():
    return tick


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
