import warnings

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    warnings.filterwarnings("ignore", message="shear range")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    number, title = marker.args
    prev = _criteria.get(number, (title, True))
    ok = prev[1] and not rep.failed
    if rep.when == "call" or rep.failed:
        _criteria[number] = (title, ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] AC{number:>2}: {title}")


@pytest.fixture
def fixture_dir(tmp_path):
    from detbench.fixtures import write_synthetic_fixture

    cfg = write_synthetic_fixture(tmp_path / "fixture")
    return cfg
