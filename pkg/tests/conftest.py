import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_acceptance = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, text): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    n, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        prev = _acceptance.get(n, (True, text))
        _acceptance[n] = (prev[0] and rep.outcome == "passed", text)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        ok, text = _acceptance[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {text}")
