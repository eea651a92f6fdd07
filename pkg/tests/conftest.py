from __future__ import annotations

import pytest

from finrpt.core import InputBundle, Report
from helpers import make_bundle, make_report


@pytest.fixture
def bundle() -> InputBundle:
    return make_bundle()


@pytest.fixture
def report() -> Report:
    return make_report()


# -- acceptance summary: one PASS/FAIL line per criterion marker ----------------


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion checked by the test")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and (rep.when == "call" or rep.failed):
        n, text = marker.args
        _, ok = item.config._criteria.get(n, (text, True))
        item.config._criteria[n] = (text, ok and rep.passed)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        text, ok = results[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}")
