import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[str, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    cid, title = mark.args
    detail = getattr(item, "criterion_detail", "")
    if rep.when == "setup" and rep.skipped:
        _criteria[cid] = ("SKIP", title, str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else "")
    elif rep.when == "call":
        if rep.skipped:
            reason = rep.longrepr[-1] if isinstance(rep.longrepr, tuple) else ""
            _criteria[cid] = ("SKIP", title, str(reason))
        else:
            _criteria[cid] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")

    def order(k):
        head = k.split("-")[0].rstrip("abcdefghijklmnopqrstuvwxyz")
        return (int(head) if head.isdigit() else 99, k)

    for cid in sorted(_criteria, key=order):
        status, title, detail = _criteria[cid]
        line = f"{status} criterion {cid}: {title}"
        if detail:
            line += f" [{detail}]"
        terminalreporter.write_line(line)
