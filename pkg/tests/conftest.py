import sys
from collections import defaultdict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> {"name", "outcomes", "notes"}
_CRITERIA: dict = defaultdict(lambda: {"name": "", "outcomes": [], "notes": []})


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion a test belongs to")


@pytest.fixture
def measure(request):
    """Attach a measured value to the criterion summary line."""
    marker = request.node.get_closest_marker("criterion")

    def note(text):
        if marker is not None:
            _CRITERIA[marker.args[0]]["notes"].append(str(text))

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry = _CRITERIA[marker.args[0]]
        entry["name"] = marker.args[1]
        entry["outcomes"].append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        outs = entry["outcomes"]
        if not outs:
            continue
        status = "FAIL" if "failed" in outs else ("SKIP" if all(o == "skipped" for o in outs) else "PASS")
        notes = f"  [{'; '.join(entry['notes'])}]" if entry["notes"] else ""
        terminalreporter.write_line(f"criterion {number} {entry['name']}: {status}{notes}")
