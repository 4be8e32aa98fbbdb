import numpy as np
import pytest

from kdforest import KdTree, SplitPolicy
from kdforest.bench import generate_dataset

_criteria: dict[int, tuple[str, list[str], list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    _, outcomes, details = _criteria.setdefault(number, (title, [], []))
    if report.when == "call" or (report.when == "setup" and not report.passed):
        outcomes.append(report.outcome)
        details.extend(v for k, v in report.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcomes, details = _criteria[number]
        status = "PASS" if outcomes and all(o == "passed" for o in outcomes) else "FAIL"
        line = f"AC{number:<3} {status}  {title}"
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def build_tree(points, dims, policy=SplitPolicy.NODE_SPLIT, max_k=32, **kw):
    tree = KdTree.create(dims, max(len(points), 1), max_k, policy=policy, **kw)
    for pt in points:
        tree.add(pt.coords, pt.seq)
    return tree


@pytest.fixture
def uniform_tree():
    points = generate_dataset(7, 500, 3)
    tree = build_tree(points, 3)
    yield tree, points
    tree.free()
