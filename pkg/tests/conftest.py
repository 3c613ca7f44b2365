from __future__ import annotations

from pathlib import Path

import pytest

from macosim.netgraph import Edge, Node, RoadNetwork

DATA = Path(__file__).parent / "data"
ROOT = Path(__file__).parent.parent

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Record one criterion verdict: ``acceptance(n, title, status, detail)``."""
    log = request.config.stash[_ACCEPTANCE]

    def record(n: int, title: str, status: str, detail: str = "") -> None:
        log[n] = (title, status, detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log):
        title, status, detail = log[n]
        terminalreporter.write_line(f"[{status}] criterion {n}: {title}" + (f" -- {detail}" if detail else ""))


def line_network(lengths_m, signalized=(), two_way=False, lanes=1) -> RoadNetwork:
    """Nodes 0..k in a row; edge i goes i -> i+1 (reverse edges appended after)."""
    k = len(lengths_m)
    nodes = tuple(Node(i, i in signalized) for i in range(k + 1))
    edges = [Edge(i, i, i + 1, int(round(L * 1000)), lanes) for i, L in enumerate(lengths_m)]
    if two_way:
        for i, L in enumerate(lengths_m):
            edges.append(Edge(len(edges), i + 1, i, int(round(L * 1000)), lanes))
    return RoadNetwork(nodes, tuple(edges))
