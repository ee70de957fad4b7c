import pytest

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results, key=lambda k: (int(str(k).rstrip("s")), str(k))):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {str(n):>2}: {'PASS' if ok else 'FAIL'}  {detail}")
