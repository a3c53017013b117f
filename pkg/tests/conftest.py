from __future__ import annotations

import sys

import pytest

from fot.instance import parse_instance


def parallel_doc(taus, u0=3.0, nu=1.0):
    return {
        "nodes": ["s", "t"],
        "arcs": [{"id": f"e{i}", "from": "s", "to": "t", "tau": float(t), "nu": nu} for i, t in enumerate(taus, 1)],
        "source": "s",
        "sink": "t",
        "u0": u0,
    }


def single_arc(nu=1.0, tau=1.0, u0=1.0):
    return parse_instance({
        "nodes": ["s", "t"],
        "arcs": [{"id": "e", "from": "s", "to": "t", "tau": tau, "nu": nu}],
        "source": "s", "sink": "t", "u0": u0,
    })


def path3(tau=1.0, nu=1.0, u0=1.0):
    return parse_instance({
        "nodes": ["s", "v", "t"],
        "arcs": [
            {"id": "sv", "from": "s", "to": "v", "tau": tau, "nu": nu},
            {"id": "vt", "from": "v", "to": "t", "tau": tau, "nu": nu},
        ],
        "source": "s", "sink": "t", "u0": u0,
    })


@pytest.fixture
def parallel4():
    return parse_instance(parallel_doc([3, 5, 7, 9]))


@pytest.fixture
def parallel2():
    return parse_instance(parallel_doc([3, 5]))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
