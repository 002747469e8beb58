import pytest


def pytest_configure(config):
    config._acceptance_lines = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records one criterion line for the summary."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}: {detail}"
        request.config._acceptance_lines[n] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config._acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
