"""Shared fixtures and the acceptance summary printed after the run."""
from __future__ import annotations

import numpy as np
import pytest

from commslide.bench.instances import generate_instance
from commslide.topology import build_graph, laplacian, spectral_constants

_ACCEPTANCE: dict[str, dict] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    props = dict(report.user_properties)
    _ACCEPTANCE[crit] = {"outcome": report.outcome, "detail": props.get("detail", "")}


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE, key=lambda c: int(c[1:])):
        r = _ACCEPTANCE[crit]
        verdict = "PASS" if r["outcome"] == "passed" else "FAIL"
        tr.write_line(f"{crit:<4} {verdict}  {r['detail']}")


@pytest.fixture
def criterion(request, record_property):
    """Tag an acceptance test and attach a one-line detail string to its report."""
    marker = request.node.get_closest_marker("acceptance")
    crit = marker.args[0]
    record_property("criterion", crit)

    def detail(text: str):
        record_property("detail", text)
        print(f"{crit}: {text}")

    return detail


@pytest.fixture(scope="session")
def desk():
    """The default convex LAD instance on a 5-agent path."""
    problem = generate_instance("lad_convex", 5, 4, 1)
    graph = build_graph("path:5")
    L = laplacian(graph, problem.d)
    return problem, graph, L, spectral_constants(L)


@pytest.fixture
def rng():
    return np.random.default_rng(20261017)
