import numpy as np
import pytest

from unisvm.data import from_arrays

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        detail = dict(item.user_properties).get("detail", "")
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _CRITERIA.append((number, title, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(_CRITERIA):
        line = f"[{status}] criterion {number:>2}: {title}"
        terminalreporter.write_line(f"{line} | {detail}" if detail else line)


@pytest.fixture
def detail(record_property):
    """Attach a one-line measurement summary to the criterion report."""
    def _set(text):
        record_property("detail", text)
    return _set


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_problem(seed, m=60, d=3, task="class"):
    r = np.random.default_rng(seed)
    X = r.normal(size=(m, d))
    if task == "class":
        y = np.where(X[:, 0] + 0.5 * X[:, 1] ** 2 + 0.3 * r.normal(size=m) > 0.3, 1.0, -1.0)
    else:
        y = np.sin(X[:, 0]) + 0.5 * X[:, 1] + 0.1 * r.normal(size=m)
    return from_arrays(X, y, task)


@pytest.fixture
def class_problem():
    return make_problem(0, task="class")


@pytest.fixture
def reg_problem():
    return make_problem(1, task="reg")
