import numpy as np
import pytest

from swfield.plasma import LabelConfig

CRITERIA = {
    1: "fourier encoding norm and derivative",
    2: "focal loss reduction and hand value",
    3: "gradient checks (heads, backbone, loss)",
    4: "adam on a quadratic, zero-gradient no-op",
    5: "labeler vs plane oracle, noiseless truth",
    6: "resampling vs binning oracle, gap flags",
    7: "backmapping delta-lon, round trip, monotone",
    8: "temporal split membership and disjointness",
    9: "metrics vs confusion-matrix oracle",
    10: "end-to-end macro-F1 and Bayes ceiling",
    11: "strategy loss ordering across 3 seeds",
    12: "bit-identical reruns",
}

_outcomes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")
    config.addinivalue_line("markers", "slow: long-running end-to-end test")


def pytest_collection_modifyitems(items):
    for item in items:
        for mark in item.iter_markers("criterion"):
            _outcomes.setdefault(int(mark.args[0]), [])


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for kw in report.keywords:
        if kw.startswith("criterion_"):
            _outcomes.setdefault(int(kw.split("_")[1]), []).append(report.outcome)


def pytest_itemcollected(item):
    # expose the criterion number as a keyword so the logreport hook can see it
    for mark in item.iter_markers("criterion"):
        item.keywords[f"criterion_{int(mark.args[0])}"] = True


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        results = _outcomes[n]
        if not results:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        elif any(r == "failed" for r in results):
            status = "FAIL"
        else:
            status = "SKIP"
        terminalreporter.write_line(f"criterion {n:2d} {status:7s} {CRITERIA.get(n, '')} ({len(results)} tests)")


@pytest.fixture
def fixture_labels():
    return LabelConfig.builtin("fixture")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
