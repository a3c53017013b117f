from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fot.generators import random_instance
from fot.instance import (
    InstanceError,
    empty_network_labels,
    hyperplane_distance,
    load_instance,
    parse_instance,
    serialize_instance,
    validate_instance,
)

from conftest import parallel_doc, path3, single_arc


def test_parse_parallel4(parallel4):
    assert parallel4.m == 4 and parallel4.n == 2
    assert [a.tau for a in parallel4.arcs] == [3.0, 5.0, 7.0, 9.0]
    assert parallel4.u0 == 3.0


def test_parse_single_arc():
    inst = single_arc()
    assert inst.m == 1 and inst.arcs[0].nu == 1.0


def test_parse_json_text_and_file(tmp_path):
    text = json.dumps(parallel_doc([3, 5]))
    assert parse_instance(text).m == 2
    p = tmp_path / "inst.json"
    p.write_text(text)
    assert load_instance(p) == parse_instance(text)


@pytest.mark.parametrize(
    "mutate, path, message",
    [
        (lambda d: d["arcs"][0].update(tau=0), "$.arcs[0].tau", "tau must be strictly positive"),
        (lambda d: d["arcs"][1].update(nu=-1), "$.arcs[1].nu", "nu must be strictly positive"),
        (lambda d: d.update(u0=0), "$.u0", "u0 must be strictly positive"),
        (lambda d: d["arcs"][1].update(id="e1"), "$.arcs[1].id", "duplicate arc id"),
        (lambda d: d["arcs"][0].update(to="x"), "$.arcs[0].to", "unknown node"),
        (lambda d: d.pop("source"), "$.source", "missing field"),
        (lambda d: d["arcs"][0].update(tau="3"), "$.arcs[0].tau", "expected a number"),
    ],
)
def test_parse_errors_name_field(mutate, path, message):
    doc = parallel_doc([3, 5])
    mutate(doc)
    with pytest.raises(InstanceError) as info:
        parse_instance(doc)
    assert info.value.path == path
    assert message in str(info.value)


def test_parse_invalid_json():
    with pytest.raises(InstanceError, match="invalid JSON"):
        parse_instance("{nope")


def test_validate(parallel4):
    assert validate_instance(parallel4) == []
    isolated = parse_instance({"nodes": ["s", "v", "t"], "arcs": [{"id": "a", "from": "s", "to": "t", "tau": 1, "nu": 1}],
                               "source": "s", "sink": "t", "u0": 1})
    assert validate_instance(isolated) == ["v unreachable from source"]
    dead = parse_instance({"nodes": ["s", "v", "t"],
                           "arcs": [{"id": "a", "from": "s", "to": "t", "tau": 1, "nu": 1},
                                    {"id": "b", "from": "s", "to": "v", "tau": 1, "nu": 1}],
                           "source": "s", "sink": "t", "u0": 1})
    assert validate_instance(dead) == ["v cannot reach sink"]


def test_empty_network_labels(parallel4):
    assert np.allclose(empty_network_labels(parallel4), [0, 3])
    assert np.allclose(empty_network_labels(single_arc()), [0, 1])
    assert np.allclose(empty_network_labels(path3()), [0, 1, 2])


@pytest.mark.parametrize("l, arc, expected", [((0, 3), "e1", 0.0), ((5, 12), "e4", 1.0), ((1, 6), "e2", 0.0)])
def test_hyperplane_distance(parallel4, l, arc, expected):
    assert hyperplane_distance(parallel4, np.array(l, float), arc) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_roundtrip_and_bellman(seed):
    inst = random_instance(np.random.default_rng(seed))
    doc = serialize_instance(inst)
    assert parse_instance(json.loads(json.dumps(doc))) == inst
    l = empty_network_labels(inst)
    for w, name in enumerate(inst.nodes):
        if w == inst.s:
            assert l[w] == 0
            continue
        best = min(l[inst.node_index[a.tail]] + a.tau for a in inst.in_arcs(name))
        assert l[w] == pytest.approx(best, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=3, max_size=3),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
)
def test_hyperplane_distance_lipschitz_and_zero_set(l, d):
    inst = path3(tau=1.5)
    l, d = np.array(l), np.array(d)
    for arc in ("sv", "vt"):
        a, b = hyperplane_distance(inst, l, arc), hyperplane_distance(inst, l + d, arc)
        assert abs(a - b) <= np.max(np.abs(d)) + 1e-9
    on = l.copy()
    on[1] = on[0] + 1.5
    assert hyperplane_distance(inst, on, "sv") == 0.0
