import logging

import numpy as np
import pytest

from wavehdnn.hypergraph import HypergraphView


@pytest.fixture(autouse=True)
def _quiet_drop_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="wavehdnn.hypergraph")


def random_incidence(rng, n_nodes, n_edges, p=0.3):
    """0/1 incidence with every node and hyperedge covered at least once."""
    H = (rng.random((n_nodes, n_edges)) < p).astype(float)
    for v in range(n_nodes):
        H[v, rng.integers(n_edges)] = 1.0
    for e in range(n_edges):
        H[rng.integers(n_nodes), e] = 1.0
    return H


@pytest.fixture
def two_node_view():
    return HypergraphView.from_incidence(np.array([[1.0], [1.0]]))


# -- acceptance summary: one line per criterion -----------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "details": []})
    entry["ok"] &= rep.passed
    entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        line = f"criterion {n:>2} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if e["details"]:
            line += "  [" + "; ".join(dict.fromkeys(e["details"])) + "]"
        terminalreporter.write_line(line)
