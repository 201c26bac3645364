import pytest

# one line per acceptance criterion, echoed after the run
CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        print(line)
        CRITERIA.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
