import pytest

_LINES = {}


@pytest.fixture
def criterion(capsys):
    """``criterion(k, ok, detail)`` records the pass/fail line of acceptance
    criterion ``k`` and fails the test when ``ok`` is false."""

    def record(k: int, ok: bool, detail: str):
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES[k] = line
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(_LINES):
        terminalreporter.write_line(_LINES[k])
