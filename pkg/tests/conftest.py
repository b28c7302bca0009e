import pytest

RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains full-size models (minutes)")
    config.stash[RESULTS] = {}


@pytest.fixture
def record(request):
    """``record(n, ok, detail)`` stores one acceptance line for the summary."""
    store = request.config.stash[RESULTS]

    def _record(n: int, ok: bool, detail: str) -> None:
        store[n] = (ok, detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash[RESULTS]
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        ok, detail = store[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
