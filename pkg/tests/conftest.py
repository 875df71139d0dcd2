import time
from contextlib import contextmanager

import pytest

ACCEPTANCE_LINES: list = []


class Criterion:
    """Collects the outcome of one acceptance criterion."""

    def __init__(self, number, title, limit_s):
        self.number, self.title, self.limit_s = number, title, limit_s
        self.checks: list = []  # (ok, text)
        self.elapsed = None

    def check(self, ok, text):
        self.checks.append((bool(ok), text))
        return bool(ok)

    @property
    def ok(self):
        in_time = self.elapsed is not None and self.elapsed < self.limit_s
        return in_time and bool(self.checks) and all(ok for ok, _ in self.checks)

    def line(self):
        detail = "; ".join(t for _, t in self.checks)
        status = "PASS" if self.ok else "FAIL"
        return (f"[{status}] criterion {self.number} {self.title}: {detail} "
                f"({self.elapsed:.1f}s, limit {self.limit_s:g}s)")


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def run(number, title, limit_s):
        c = Criterion(number, title, limit_s)
        t0 = time.perf_counter()
        try:
            yield c
        finally:
            c.elapsed = time.perf_counter() - t0
            ACCEPTANCE_LINES.append(c.line())
            with capsys.disabled():
                print("\n" + c.line())
        for ok, text in c.checks:
            assert ok, text
        assert c.elapsed < limit_s, f"took {c.elapsed:.1f}s, limit {limit_s}s"

    return run


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
