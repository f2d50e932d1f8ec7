import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))   # lets tests import the oracles module

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    entry = _results.setdefault(num, {"title": title, "passed": True, "seconds": 0.0, "note": ""})
    if rep.when == "call":
        entry["seconds"] += rep.duration
    if rep.failed:
        entry["passed"] = False
        entry["note"] = str(rep.longrepr).strip().splitlines()[-1][:100] if rep.longrepr else ""
    elif rep.skipped and rep.when != "teardown":
        entry["passed"] = None


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_results):
        e = _results[num]
        verdict = {True: "PASS", False: "FAIL", None: "SKIP"}[e["passed"]]
        line = f"AC{num:<3d}{verdict}  {e['title']}  ({e['seconds']:.1f} s)"
        if e["note"]:
            line += f"  -- {e['note']}"
        tr.write_line(line)
