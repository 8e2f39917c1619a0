import pytest

_ACCEPTANCE: list[str] = []


@pytest.fixture
def record():
    """Log one PASS/FAIL line for an acceptance criterion and assert it."""

    def _record(number: int, passed: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert passed, line

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
