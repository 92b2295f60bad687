import pytest

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one pass/fail line for an acceptance criterion and return the outcome.

    ``verdict.skip(criterion, reason)`` records a skip line and skips the test.
    """

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        request.config.stash[VERDICTS].append(line)
        print(line)
        return ok

    def skip(criterion: str, reason: str):
        line = f"[SKIP] {criterion}: {reason}"
        request.config.stash[VERDICTS].append(line)
        pytest.skip(line)

    record.skip = skip
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
