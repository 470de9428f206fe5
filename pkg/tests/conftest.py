import pytest

_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; it is echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_KEY, [])

    def record(number: int, ok: bool, detail: str) -> None:
        lines.append((number, ok, detail))
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
