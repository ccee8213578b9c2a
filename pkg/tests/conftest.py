"""PASS/FAIL summary for the acceptance criteria.

Tests marked ``@pytest.mark.criterion(k, title)`` get one summary line each
at the end of the run; a test can attach measured values through the
``measured`` fixture.
"""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k, title): acceptance criterion k")


@pytest.fixture
def measured(request):
    """Dict whose contents are echoed next to the criterion's verdict."""
    d = {}
    request.node._measured = d
    return d


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    k, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        verdict = "PASS" if rep.passed else ("WAIVED" if rep.skipped else "FAIL")
        detail = getattr(item, "_measured", {})
        if rep.skipped and isinstance(rep.longrepr, tuple):
            detail = dict(detail, reason=rep.longrepr[2])
        _RESULTS[k] = (verdict, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        verdict, title, detail = _RESULTS[k]
        line = f"{verdict} criterion {k}: {title}"
        if detail:
            line += "  [" + "; ".join(f"{a}={_fmt(v)}" for a, v in detail.items()) + "]"
        terminalreporter.write_line(line)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "(" + ", ".join(_fmt(x) for x in v) + ")"
    return str(v)
