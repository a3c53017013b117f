from __future__ import annotations

import heapq
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fot.generators import random_instance, simple_paths
from fot.instance import parse_instance
from fot.loading import load_profile
from fot.packets import (
    PacketError,
    PacketInstance,
    PacketProfile,
    best_response,
    br_residual,
    default_packet_count,
    embed_packets,
    find_packet_equilibrium,
    simulate_packets,
)

from conftest import parallel_doc, path3, single_arc


def exact_schedule(pinst, prof):
    """Independent event simulation in exact rational arithmetic.

    Returns ``{k: [(arc, entry, start, end, tail), ...]}`` and sink arrivals.
    """
    inst = pinst.base
    beta, u0 = Fraction(pinst.beta), Fraction(inst.u0)
    arcs = {a.id: a for a in inst.arcs}
    free = {a: Fraction(-1) for a in arcs}
    heap = [(beta * k / u0, k, 0) for k in pinst.indices]
    heapq.heapify(heap)
    visits = {k: [] for k in pinst.indices}
    arrival = {}
    while heap:
        t, k, pos = heapq.heappop(heap)
        path = prof.paths[k]
        if pos == len(path):
            arrival[k] = t
            continue
        a = arcs[path[pos]]
        start = max(t, free[a.id])
        end = start + beta / Fraction(a.nu)
        free[a.id] = end
        tail = end + Fraction(a.tau)
        visits[k].append((a.id, t, start, end, tail))
        heapq.heappush(heap, (tail, k, pos + 1))
    return visits, arrival


# -- simulation examples ------------------------------------------------------------


@pytest.mark.parametrize("lead", [True, False])
def test_single_arc_arrivals(lead):
    inst = single_arc()
    pinst = PacketInstance(inst, 1.0, 10, lead)
    out = simulate_packets(pinst, PacketProfile.uniform(pinst, ("e",)))
    for k in pinst.indices:
        assert out.arrival[k] == pytest.approx(k + 2)


def test_single_arc_fast_inflow():
    inst = single_arc(u0=2.0)
    pinst = PacketInstance(inst, 1.0, 10, lead_packet=False)
    out = simulate_packets(pinst, PacketProfile.uniform(pinst, ("e",)))
    r = out.records(1)[0]
    assert (r.proc_start, r.proc_end) == pytest.approx((0.5, 1.5))
    for k in range(1, 11):
        r = out.records(k)[0]
        assert (r.proc_start, r.proc_end) == pytest.approx((k - 0.5, k + 0.5))
        assert out.arrival[k] == pytest.approx(k + 1.5)


def test_parallel2_packet5(parallel2):
    pinst = PacketInstance(parallel2, 1.0, 5, lead_packet=False)
    prof = PacketProfile({1: ("e1",), 2: ("e1",), 3: ("e1",), 4: ("e1",), 5: ("e2",)})
    assert simulate_packets(pinst, prof).arrival[5] == pytest.approx(23 / 3)


def test_profile_json_and_csv(parallel2):
    prof = PacketProfile({1: ("e1",), 2: ("e2",)})
    doc = json.loads(json.dumps(prof.to_json()))
    assert doc == {"paths": {"1": ["e1"], "2": ["e2"]}}
    assert PacketProfile.from_json(doc) == prof
    pinst = PacketInstance(parallel2, 1.0, 2, lead_packet=False)
    rows = simulate_packets(pinst, prof).csv_rows()
    assert rows[0] == (1, "e1", pytest.approx(1 / 3), pytest.approx(1 / 3), pytest.approx(4 / 3), pytest.approx(13 / 3))


def test_missing_packets_rejected(parallel2):
    pinst = PacketInstance(parallel2, 1.0, 3, lead_packet=False)
    with pytest.raises(PacketError, match="misses"):
        simulate_packets(pinst, PacketProfile({1: ("e1",)}))


# -- best responses and equilibria -------------------------------------------------------


def test_best_response_examples(parallel2):
    pinst = PacketInstance(parallel2, 1.0, 5, lead_packet=False)
    prof = PacketProfile({k: ("e1",) for k in range(1, 6)})
    br = best_response(pinst, prof, 5)
    assert br.path == ("e2",) and br.arrival == pytest.approx(23 / 3)
    assert br.current_arrival == pytest.approx(25 / 3)
    br = best_response(pinst, prof, 1)
    assert br.path == ("e1",) and br.arrival == pytest.approx(13 / 3)
    heur = best_response(pinst, prof, 5, mode="heuristic")
    assert heur.path == ("e2",) and heur.arrival == pytest.approx(23 / 3)


def test_best_response_single_path():
    inst = path3()
    pinst = PacketInstance(inst, 1.0, 4)
    prof = PacketProfile.uniform(pinst, ("sv", "vt"))
    assert best_response(pinst, prof, 3).path == ("sv", "vt")
    prof, status = find_packet_equilibrium(pinst)
    assert status.converged and status.rounds == 1


def test_path_cap():
    inst = parse_instance(parallel_doc([1, 2, 3]))
    pinst = PacketInstance(inst, 1.0, 2)
    with pytest.raises(PacketError, match="path cap"):
        best_response(pinst, PacketProfile.uniform(pinst, ("e1",)), 1, path_cap=2)


def test_parallel2_equilibrium(parallel2):
    pinst = PacketInstance(parallel2, 1.0, 12)
    prof, status = find_packet_equilibrium(pinst)
    assert status.converged
    assert br_residual(pinst, prof) <= 1e-9


def test_parallel4_equilibrium_shares(parallel4):
    pinst = PacketInstance(parallel4, 0.25, 120)
    prof, status = find_packet_equilibrium(pinst)
    assert status.converged
    # in the steady regime (entries after theta = 5) each of e1..e3 takes a third
    late = [prof.paths[k] for k in pinst.indices if pinst.release(k) > 5.5 and pinst.release(k) <= 9.5]
    shares = np.array([late.count((f"e{i}",)) for i in range(1, 5)]) / len(late)
    assert np.allclose(shares, [1 / 3, 1 / 3, 1 / 3, 0], atol=0.05)


def test_default_packet_count(parallel4):
    # releases must pass 10 + free-flow diameter 3
    n = default_packet_count(parallel4, 0.5, 10.0)
    pinst = PacketInstance(parallel4, 0.5, n)
    assert pinst.release(n) > 13.0


# -- embedding -----------------------------------------------------------------------------


def test_embedding_single_arc():
    inst = single_arc()
    pinst = PacketInstance(inst, 1.0, 10)
    prof = PacketProfile.uniform(pinst, ("e",))
    classes = embed_packets(pinst, prof)
    for k in range(1, 11):
        c = classes[k]
        assert (c.start, c.end) == pytest.approx((k - 1, k))
        assert c.waiting[0](0.0) == pytest.approx(1.0) and c.waiting[1](0.25) == pytest.approx(0.75)
    out = load_profile(inst, classes)
    assert out.departure(3, 1, 0.5) == pytest.approx(5.0)


@pytest.mark.parametrize("beta", [1.0, 0.5, 0.3])
def test_embedding_interval_length(parallel2, beta):
    pinst = PacketInstance(parallel2, beta, 5)
    for c in embed_packets(pinst, PacketProfile.uniform(pinst, ("e1",))):
        if not c.is_atom:
            assert c.end - c.start == pytest.approx(beta / parallel2.u0)


def embedding_error(pinst, prof):
    sim = simulate_packets(pinst, prof)
    out = load_profile(pinst.base, embed_packets(pinst, prof, sim))
    worst = 0.0
    for c, k in enumerate(pinst.indices):
        deps = sim.node_departures(k)
        mass = out.classes[c].mass
        for pos, d in enumerate(deps):
            for mu in (0.0, 0.5 * mass, mass):
                worst = max(worst, abs(out.departure(c, pos, mu) - d))
    return worst


def test_embedding_parallel4(parallel4):
    pinst = PacketInstance(parallel4, 0.5, 40)
    prof, _ = find_packet_equilibrium(pinst)
    assert embedding_error(pinst, prof) <= 1e-9


# -- properties ----------------------------------------------------------------------------


def random_packet_setup(seed, max_packets=60, lead=None):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_nodes=5, max_arcs=8)
    paths = simple_paths(inst)
    beta = float(rng.choice([1.0, 0.5, 0.25, float(np.round(rng.uniform(0.1, 1.5), 3))]))
    lead = bool(rng.random() < 0.5) if lead is None else lead
    pinst = PacketInstance(inst, beta, int(rng.integers(1, max_packets + 1)), lead)
    prof = PacketProfile({k: paths[int(rng.integers(len(paths)))] for k in pinst.indices})
    return pinst, prof


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_simulation_matches_exact_oracle(seed):
    pinst, prof = random_packet_setup(seed)
    out = simulate_packets(pinst, prof)
    visits, arrival = exact_schedule(pinst, prof)
    for k in pinst.indices:
        assert out.arrival[k] == pytest.approx(float(arrival[k]), abs=1e-9)
        for r, (arc, entry, start, end, tail) in zip(out.records(k), visits[k]):
            assert r.arc == arc
            assert (r.entry, r.proc_start, r.proc_end, r.tail_arrival) == pytest.approx(
                tuple(float(v) for v in (entry, start, end, tail)), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_server_fifo_and_release(seed):
    pinst, prof = random_packet_setup(seed)
    out = simulate_packets(pinst, prof)
    by_arc = {}
    for k in pinst.indices:
        for r in out.records(k):
            by_arc.setdefault(r.arc, []).append(r)
            service = pinst.beta / pinst.base.arc(r.arc).nu
            assert r.proc_end - r.proc_start == pytest.approx(service)
            assert r.proc_start >= r.entry - 1e-12
        assert np.isfinite(out.arrival[k])
    for rs in by_arc.values():
        rs.sort(key=lambda r: r.proc_start)
        for a, b in zip(rs, rs[1:]):
            assert b.proc_start >= a.proc_end - 1e-9  # exclusive server
            assert (a.entry, a.packet) <= (b.entry + 1e-9, b.packet) or a.entry < b.entry  # FIFO
    departures = [out.node_departures(k)[0] for k in pinst.indices]
    assert all(x <= y for x, y in zip(departures, departures[1:]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_embedding_equivalence(seed):
    pinst, prof = random_packet_setup(seed)
    assert embedding_error(pinst, prof) <= 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_heuristic_never_beats_exact(seed):
    pinst, prof = random_packet_setup(seed, max_packets=20)
    for k in list(pinst.indices)[:5]:
        exact = best_response(pinst, prof, k)
        heur = best_response(pinst, prof, k, mode="heuristic")
        assert exact.arrival <= heur.arrival + 1e-9
        assert exact.arrival <= exact.current_arrival + 1e-9
