import pytest

# (criterion, verdict line) pairs appended by the acceptance suite
ACCEPTANCE_LINES: list[tuple[int, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records and prints one PASS/FAIL line for criterion ``n``."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((n, line))
        print(line, flush=True)
        return ok

    return record
