import numpy as np
import pytest

from pcrkit import meshio, shapes


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def chair_mesh():
    return meshio.parse_off(shapes.chair_off())


@pytest.fixture(scope="session")
def chair_cloud(chair_mesh):
    return meshio.sample_mesh(chair_mesh, 256, np.random.default_rng(7))


_criteria: dict[int, list] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None or report.when == "teardown" and report.passed:
        return
    number, title = marker
    entry = _criteria.setdefault(number, [title, True, ""])
    if report.failed:
        entry[1] = False
        entry[2] = str(report.longrepr).strip().splitlines()[-1][:160]
    elif report.when == "call":
        details = [str(v) for k, v in report.user_properties if k == "detail"]
        if details and entry[1]:
            entry[2] = "; ".join(filter(None, [entry[2], *details]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, why = _criteria[number]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({why})" if why else ""))
