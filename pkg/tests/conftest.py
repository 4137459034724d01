import numpy as np
import pytest

from stereopose.geometry import DEFAULT_RIG


@pytest.fixture
def rig():
    return DEFAULT_RIG


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` records and prints one pass/fail line, then asserts."""
    def record(number, title, ok, detail=""):
        _ACCEPTANCE[number] = (title, bool(ok), detail)
        print(f"\nCRITERION {number:2d} {'PASS' if ok else 'FAIL'}: {title} | {detail}")
        assert ok, f"criterion {number} failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{number:2d} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
    missing = sorted(set(range(1, 15)) - set(_ACCEPTANCE))
    if missing:
        terminalreporter.write_line(f"not run: {', '.join(map(str, missing))}")
