import pytest

from mfg_select.coefficients import canonical_table


@pytest.fixture(scope="session")
def table():
    return canonical_table()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for res in sorted(results, key=lambda r: r.number):
            terminalreporter.write_line(res.line())
