import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rfqcausal.simulator import ScenarioConfig, simulate

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_world():
    """A 4k-record default scenario shared by the cheap tests."""
    return simulate(ScenarioConfig(n_rfqs=4000, seed=123))


@pytest.fixture(scope="session")
def small_data(small_world):
    return small_world.records


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


# -- acceptance summary --------------------------------------------------------------

_VERDICTS = {}


@pytest.fixture
def detail(request):
    """Dict a criterion test fills with the numbers behind its verdict."""
    box = {}
    request.node.acceptance_detail = box
    return box


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = mark.args
    info = getattr(item, "acceptance_detail", {})
    text = ", ".join(f"{k} {v}" for k, v in info.items())
    if rep.failed and not text:
        text = str(rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else rep.longrepr)[:160]
    _VERDICTS[number] = (title, "PASS" if rep.passed else "FAIL", text)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, verdict, text = _VERDICTS[number]
        terminalreporter.write_line(f"{verdict}  {number:2d}. {title}" + (f"  [{text}]" if text else ""))
