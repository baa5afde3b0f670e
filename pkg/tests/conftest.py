import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def f32_exact(arr):
    """Values that survive a float32 round trip unchanged."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def acceptance_report():
    """Record one acceptance line; the lines are printed at the end of the session."""
    def record(name: str, ok: bool, detail: str = ""):
        _ACCEPTANCE.append((name, bool(ok), detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
