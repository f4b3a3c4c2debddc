import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# criterion id -> [description, outcomes]
_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    cid, text = marker.args
    entry = _CRITERIA.setdefault(cid, [[], []])
    if text not in entry[0]:
        entry[0].append(text)
    if rep.failed:
        entry[1].append("FAIL")
    elif rep.skipped:
        entry[1].append("SKIP")
    elif rep.when == "call":
        entry[1].append("PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA):
        text, outcomes = _CRITERIA[cid]
        if "FAIL" in outcomes:
            status = "FAIL"
        elif "SKIP" in outcomes or not outcomes:
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"{status}  {cid}  {'; '.join(text)}")
