import pytest
from hypothesis import HealthCheck, settings

from dsmlangevin import dist_zoo

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def zoo():
    return dist_zoo.zoo()


@pytest.fixture(scope="session")
def zoo_constants(zoo):
    return {name: dist_zoo.default_constants(spec) for name, spec in zoo.items()}


# one PASS/FAIL line per acceptance criterion, printed after the run
_VERDICTS: list[tuple[str, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _VERDICTS.append(("PASS" if rep.passed else "FAIL", str(mark.args[0]), mark.args[1], detail))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    order = sorted(_VERDICTS, key=lambda v: (int("".join(c for c in v[1] if c.isdigit())), v[1]))
    for status, label, title, detail in order:
        terminalreporter.write_line(f"{status} criterion {label}: {title}" + (f" [{detail}]" if detail else ""))
