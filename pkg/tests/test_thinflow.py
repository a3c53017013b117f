from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from fot._maxflow import feasible_flow
from fot.generators import random_instance, random_valid_configuration
from fot.instance import parse_instance
from fot.thinflow import (
    Configuration,
    GeneralizedSubnetwork,
    ThinFlow,
    ThinFlowError,
    check_thin_flow,
    classify_configuration,
    enumerate_thin_flows,
    is_valid_configuration,
    solve_thin_flow,
    thin_flow_oracle,
)

from conftest import parallel_doc, path3, single_arc


def cfg(active, resetting=()):
    return Configuration(frozenset(active), frozenset(resetting))


# -- classification and validity ----------------------------------------------------


def test_classify_examples(parallel4):
    assert classify_configuration(parallel4, np.array([0.0, 3.0])) == cfg({"e1"})
    assert classify_configuration(parallel4, np.array([5.0, 12.0])) == cfg({"e1", "e2", "e3"}, {"e1", "e2"})
    sub = GeneralizedSubnetwork(frozenset({"e1", "e2"}))
    assert classify_configuration(parallel4, np.array([1.0, 6.0]), sub) == cfg({"e1", "e2"}, {"e1"})


def test_classify_forced_queue_arcs(parallel4):
    sub = GeneralizedSubnetwork(frozenset({"e1", "e2"}), frozenset({"e2"}))
    got = classify_configuration(parallel4, np.array([0.0, 3.0]), sub)
    assert got == cfg({"e1", "e2"}, {"e2"})


def test_classify_boundary_tolerance(parallel4):
    got = classify_configuration(parallel4, np.array([0.0, 5.0 + 5e-10]))
    assert "e2" in got.active and "e2" not in got.resetting


def test_validity_examples(parallel4):
    assert is_valid_configuration(parallel4, cfg({"e1"}, {"e1"}))
    assert is_valid_configuration(parallel4, cfg({"e1", "e2", "e3"}, {"e1", "e2"}))
    v = is_valid_configuration(path3(), cfg({"sv"}, {"sv"}))
    assert not v
    assert "(ii): no s-t path through sv" in v.witness


def test_validity_cycle():
    inst = parse_instance({
        "nodes": ["s", "a", "b", "t"],
        "arcs": [
            {"id": "sa", "from": "s", "to": "a", "tau": 1, "nu": 1},
            {"id": "ab", "from": "a", "to": "b", "tau": 1, "nu": 1},
            {"id": "ba", "from": "b", "to": "a", "tau": 1, "nu": 1},
            {"id": "bt", "from": "b", "to": "t", "tau": 1, "nu": 1},
        ],
        "source": "s", "sink": "t", "u0": 1,
    })
    v = is_valid_configuration(inst, cfg({"sa", "ab", "ba", "bt"}, {"ab"}))
    assert not v and v.witness.startswith("(iii)")


def test_configuration_json_roundtrip():
    c = cfg({"e2", "e1"}, {"e1"})
    assert c.to_json() == {"active": ["e1", "e2"], "resetting": ["e1"]}
    assert Configuration.from_json(c.to_json()) == c


# -- solver and oracle examples ----------------------------------------------------------


def test_single_arc_no_queue():
    inst = single_arc(nu=2.0, u0=1.0)
    tf = solve_thin_flow(inst, cfg({"e"}))
    assert np.allclose(tf.lam, [1, 1]) and np.allclose(tf.x, [1])
    assert np.allclose(thin_flow_oracle(inst, cfg({"e"})).lam, [1, 1])


def test_parallel4_phase2(parallel4):
    tf = solve_thin_flow(parallel4, cfg({"e1", "e2"}, {"e1"}))
    assert tf.lam[1] == pytest.approx(1.5, abs=1e-12)
    assert np.allclose(tf.x, [1.5, 1.5, 0, 0])
    assert thin_flow_oracle(parallel4, cfg({"e1", "e2"}, {"e1"})).lam[1] == pytest.approx(1.5)


def test_parallel4_steady(parallel4):
    tf = solve_thin_flow(parallel4, cfg({"e1", "e2", "e3"}, {"e1", "e2"}))
    assert tf.lam[1] == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(tf.x, [1, 1, 1, 0])


def test_oracle_single_active_arc(parallel4):
    assert thin_flow_oracle(parallel4, cfg({"e1"})).lam[1] == pytest.approx(3.0)


def test_solver_rejects_invalid():
    with pytest.raises(ThinFlowError, match="invalid configuration"):
        solve_thin_flow(path3(), cfg({"sv"}, {"sv"}))


def test_thinflow_json_roundtrip(parallel4):
    tf = solve_thin_flow(parallel4, cfg({"e1", "e2"}, {"e1"}))
    doc = tf.to_json(parallel4)
    assert doc["lambda"] == {"s": 1.0, "t": 1.5}
    back = ThinFlow.from_json(parallel4, doc)
    assert np.array_equal(back.lam, tf.lam) and np.array_equal(back.x, tf.x)


# -- checker ----------------------------------------------------------------------------


def test_checker_on_solver_output(parallel4):
    c = cfg({"e1", "e2"}, {"e1"})
    rep = check_thin_flow(parallel4, c, solve_thin_flow(parallel4, c))
    assert rep.passes and rep.max_residual <= 1e-12


def test_checker_perturbed_label(parallel4):
    c = cfg({"e1", "e2"}, {"e1"})
    tf = solve_thin_flow(parallel4, c)
    bad = ThinFlow(tf.x, np.array([1.0, 1.6]))
    rep = check_thin_flow(parallel4, c, bad)
    assert rep.flow_equality == pytest.approx(0.1)
    assert not rep.passes


def test_checker_conservation():
    inst = path3(u0=1.0)
    c = cfg({"sv", "vt"})
    bad = ThinFlow(np.array([1.0, 0.8]), np.array([1.0, 1.0, 1.0]))
    assert check_thin_flow(inst, c, bad).conservation == pytest.approx(0.2)


# -- independent oracles ----------------------------------------------------------------


def parallel_closed_form(nus, resetting, u0):
    """Target label of a parallel-arc network, solved by hand.

    With R the resetting and N the other active arcs: the label is 1 when
    sum_R nu <= u0 <= sum_all nu, otherwise u0 over the capacity that binds.
    """
    cap_r = sum(nu for nu, r in zip(nus, resetting) if r)
    cap_all = sum(nus)
    has_n = not all(resetting)
    if not has_n:
        return u0 / cap_r
    if u0 > cap_all:
        return u0 / cap_all
    if u0 < cap_r:
        return u0 / cap_r
    return 1.0


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0.25, 4.0), st.booleans()), min_size=1, max_size=6),
    st.floats(0.25, 8.0),
)
def test_parallel_networks_match_closed_form(arcs, u0):
    doc = {
        "nodes": ["s", "t"],
        "arcs": [{"id": f"a{i}", "from": "s", "to": "t", "tau": 1.0 + i, "nu": nu} for i, (nu, _) in enumerate(arcs)],
        "source": "s", "sink": "t", "u0": u0,
    }
    inst = parse_instance(doc)
    c = cfg({f"a{i}" for i in range(len(arcs))}, {f"a{i}" for i, (_, r) in enumerate(arcs) if r})
    tf = solve_thin_flow(inst, c)
    expected = parallel_closed_form([nu for nu, _ in arcs], [r for _, r in arcs], u0)
    assert tf.lam[1] == pytest.approx(expected, rel=1e-9)
    assert check_thin_flow(inst, c, tf).passes


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solver_matches_oracle_and_invariants(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_nodes=5, max_arcs=8)
    c = random_valid_configuration(rng, inst)
    if c is None:
        return
    tf = solve_thin_flow(inst, c)
    ref = thin_flow_oracle(inst, c)
    assert np.max(np.abs(tf.lam - ref.lam)) <= 1e-6
    rep = check_thin_flow(inst, c, tf)
    assert rep.passes
    assert np.all(tf.x >= -1e-9)
    assert np.all(tf.lam > 0)
    assert np.all(tf.lam <= inst.kappa + 1e-9)
    # resetting arcs carry nu * lambda_w
    for i, a in enumerate(inst.arcs):
        if a.id in c.resetting:
            assert tf.x[i] == pytest.approx(a.nu * tf.lam[inst.node_index[a.head]], abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_oracle_labels_unique_across_candidates(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_nodes=4, max_arcs=6)
    c = random_valid_configuration(rng, inst)
    if c is None:
        return
    lams = [tf.lam for tf in enumerate_thin_flows(inst, c)]
    assert lams
    for lam in lams[1:]:
        assert np.max(np.abs(lam - lams[0])) <= 1e-6


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_feasible_flow_agrees_with_lp(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    arcs = []
    for _ in range(int(rng.integers(1, 10))):
        u, v = (int(x) for x in rng.choice(n, size=2, replace=False))
        lo = float(rng.choice([0.0, rng.uniform(0, 1)]))
        arcs.append((u, v, lo, lo + float(rng.uniform(0, 3))))
    supply = np.zeros(n)
    amount = float(rng.uniform(0, 3))
    supply[0], supply[n - 1] = amount, -amount
    x = feasible_flow(n, arcs, supply)
    A = np.zeros((n, len(arcs)))
    for k, (u, v, _, _) in enumerate(arcs):
        A[u, k] += 1
        A[v, k] -= 1
    lp = linprog(np.zeros(len(arcs)), A_eq=A, b_eq=supply, bounds=[(a[2], a[3]) for a in arcs], method="highs")
    assert (x is not None) == (lp.status == 0)
    if x is not None:
        assert np.allclose(A @ x, supply, atol=1e-9)
        assert all(a[2] - 1e-12 <= xi <= a[3] + 1e-12 for a, xi in zip(arcs, x))
