import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, budget): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    detail = ""
    if rep.failed:
        detail = str(call.excinfo.value).strip().splitlines()[0][:160] if call.excinfo else ""
    _criteria[number] = (title, rep.passed, rep.duration, marker.kwargs.get("budget"), detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_criteria):
        title, passed, duration, budget, detail = _criteria[number]
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title}  ({duration:.2f}s / budget {budget}s)"
        tr.write_line(line + (f"  -- {detail}" if detail else ""))
    passed = sum(1 for v in _criteria.values() if v[1])
    tr.write_line(f"{passed}/{len(_criteria)} criteria passed")
