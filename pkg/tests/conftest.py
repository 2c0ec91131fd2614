import functools

import numpy as np
import pytest

from inclusion_guard import hmm
from inclusion_guard.hosts import RankTable, RoleTable, SuffixTable, Tables

MONOTONE_SLACK = 1e-8

# Every Baum-Welch run anywhere in the suite goes through this wrapper, so a
# log-likelihood decrease fails whichever test triggered it.
TRAINING_RUNS = {"runs": 0, "worst_decrease": 0.0}
_train = hmm.train_baum_welch


@functools.wraps(_train)
def _checked_train(*args, **kwargs):
    model, trace = _train(*args, **kwargs)
    TRAINING_RUNS["runs"] += 1
    TRAINING_RUNS["worst_decrease"] = max(TRAINING_RUNS["worst_decrease"], trace.max_decrease())
    assert trace.max_decrease() <= MONOTONE_SLACK, trace.log_likelihoods
    return model, trace


hmm.train_baum_welch = _checked_train

SMALL_PSL = """\
// ===BEGIN ICANN DOMAINS===
com
org
net
info
biz
de
uk
co.uk
cn
com.cn
*.ck
!www.ck
xn--p1ai
// ===END ICANN DOMAINS===
// ===BEGIN PRIVATE DOMAINS===
dyndns.org
us.com
// ===END PRIVATE DOMAINS===
"""


@pytest.fixture(scope="session")
def small_suffixes():
    return SuffixTable.parse(SMALL_PSL, version="test")


@pytest.fixture
def tables():
    ranks = RankTable({"google.com": 1, "facebook.com": 3, "a.com": 500_000})
    roles = RoleTable.from_sets(ad_networks={"doubleclick.net", "ads.example.com"},
                                cdns={"cloudfront.net"}, shorteners={"bit.ly"})
    return Tables(ranks=ranks, roles=roles)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting ---
# Tests marked ``criterion("name")`` get one PASS/FAIL line in the terminal
# summary, with whatever they stored through the ``measured`` fixture.

CRITERIA: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by this test")


@pytest.fixture
def measured(request):
    marker = request.node.get_closest_marker("criterion")
    details: dict = {}
    if marker is not None:
        CRITERIA.setdefault(marker.args[0], {"outcome": None, "details": details})
        CRITERIA[marker.args[0]]["details"] = details
    return details


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    entry = CRITERIA.setdefault(marker.args[0], {"outcome": None, "details": {}})
    if report.failed or report.when == "call":
        entry["outcome"] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, entry in CRITERIA.items():
        details = ", ".join(f"{k}={v}" for k, v in entry["details"].items())
        tr.write_line(f"{entry['outcome'] or 'NOT RUN'}  {name}" + (f"  [{details}]" if details else ""))
    tr.write_line(f"suite-wide Baum-Welch runs: {TRAINING_RUNS['runs']}, "
                  f"worst per-iteration log-likelihood decrease: {TRAINING_RUNS['worst_decrease']:.3g}")
