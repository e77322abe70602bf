import pytest

_results: dict[str, list[tuple[str, str]]] = {}
_titles: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            cid, title = m.args
            _titles[cid] = title
            item.user_properties.append(("criterion", cid))


def pytest_runtest_logreport(report):
    cid = dict(report.user_properties).get("criterion")
    if cid is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = report.outcome
        if hasattr(report, "wasxfail"):
            outcome = "xfailed"
        _results.setdefault(cid, []).append((report.nodeid, outcome))


def _key(cid: str):
    head = cid.rstrip("abcdefghijklmnopqrstuvwxyz")
    return int(head[1:]) if head[1:].isdigit() else 0, cid


def pytest_terminal_summary(terminalreporter):
    if not _titles:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_titles, key=_key):
        outcomes = [o for _, o in _results.get(cid, [])]
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "FAIL"
        tr.write_line(f"{cid:<4} {status:<7} {_titles[cid]}")


@pytest.fixture
def charging():
    from jurysim.synthetic import charging_case

    return charging_case()
