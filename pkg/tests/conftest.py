import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def acceptance(request):
    """Record the outcome of one acceptance criterion for the closing summary."""
    results = request.config.stash[_RESULTS]

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        results[number] = (title, bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[_RESULTS]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, passed, detail = results[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}: {detail}")
