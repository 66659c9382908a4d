import numpy as np
import pytest

ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(request):
    """Record a named acceptance criterion's outcome for the summary table."""
    entry = {"name": None, "passed": False, "detail": ""}

    def declare(name, detail=""):
        entry["name"], entry["detail"] = name, detail

    yield declare
    if entry["name"]:
        report = getattr(request.node, "rep_call", None)
        entry["passed"] = bool(report and report.passed)
        ACCEPTANCE.append(entry)
        print(f"\n[{'PASS' if entry['passed'] else 'FAIL'}] {entry['name']} {entry['detail']}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for entry in ACCEPTANCE:
        status = "PASS" if entry["passed"] else "FAIL"
        terminalreporter.write_line(f"{status}  {entry['name']}  {entry['detail']}")
