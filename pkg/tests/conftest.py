from collections import defaultdict
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]

_outcomes = defaultdict(list)
_details = defaultdict(list)
_titles = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def fixtures_dir():
    return ROOT / "fixtures"


@pytest.fixture
def note(request):
    """Attach a measured value to the current test's acceptance criterion."""
    marker = request.node.get_closest_marker("criterion")
    return lambda text: _details[marker.args[0]].append(text) if marker else None


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    _titles[number] = title
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _outcomes[number].append(rep.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        ok = all(_outcomes[number])
        detail = "; ".join(_details[number])
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {_titles[number]}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
