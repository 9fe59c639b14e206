import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from fadegame.presets import example1, example2, example3  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

MODELS = {"example1": example1, "example2": example2, "example3": example3}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(MODELS))
def any_model(request):
    return MODELS[request.param](0.0)


def decoupled(n_users=2, budget=2.0):
    """Zero cross gains: every user faces a single-user channel."""
    from fadegame.channel import ChannelModel
    return ChannelModel.symmetric(n_users, [0.5, 2.0], [0.0], budget)


# one verdict line per acceptance criterion, printed after the run
_VERDICTS = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        n, title = mark.args
        status = "PASS" if rep.passed else "FAIL"
        notes = getattr(item, "criterion_notes", [])
        _VERDICTS.append((n, f"criterion {n:>2} {status}: {title}", notes))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line, notes in sorted(_VERDICTS):
        terminalreporter.write_line(line)
        for note in notes:
            terminalreporter.write_line(f"    {note}")


@pytest.fixture
def note(request):
    """Attach detail lines to the current criterion's verdict."""
    request.node.criterion_notes = []
    return request.node.criterion_notes.append
