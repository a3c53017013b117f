"""Atomic packet routing.

Packet ``k`` (size ``beta``) leaves the source at ``beta * k / u0``.  Each arc
has a single server that processes one packet at a time for ``beta / nu``
in order of (arc entry time, packet index); a processed packet then travels
for ``tau``.  By default a lead packet 0 is released at time 0, matching the
continuous model where inflow starts at time 0.
"""

from __future__ import annotations

import heapq
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .generators import simple_paths
from .instance import Instance
from .loading import Affine, StrategyClass


class PacketError(ValueError):
    pass


@dataclass(frozen=True)
class PacketInstance:
    base: Instance
    beta: float
    packet_count: int
    lead_packet: bool = True

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise PacketError("beta must be positive")
        if self.packet_count < 1:
            raise PacketError("packet_count must be at least 1")

    @property
    def first(self) -> int:
        return 0 if self.lead_packet else 1

    @property
    def indices(self) -> range:
        return range(self.first, self.packet_count + 1)

    def release(self, k: int) -> float:
        return self.beta * k / self.base.u0


@dataclass(frozen=True)
class PacketProfile:
    paths: Mapping[int, tuple[str, ...]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "paths", {int(k): tuple(p) for k, p in self.paths.items()})

    def with_path(self, k: int, path: Sequence[str]) -> PacketProfile:
        paths = dict(self.paths)
        paths[k] = tuple(path)
        return PacketProfile(paths)

    def to_json(self) -> dict[str, Any]:
        return {"paths": {str(k): list(p) for k, p in sorted(self.paths.items())}}

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> PacketProfile:
        return cls({int(k): tuple(v) for k, v in doc["paths"].items()})

    @classmethod
    def uniform(cls, pinst: PacketInstance, path: Sequence[str]) -> PacketProfile:
        return cls({k: tuple(path) for k in pinst.indices})


@dataclass(frozen=True)
class ArcVisit:
    packet: int
    arc: str
    entry: float
    proc_start: float
    proc_end: float
    tail_arrival: float


@dataclass
class PacketOutcome:
    pinst: PacketInstance
    paths: dict[int, tuple[int, ...]]
    # visits[k] = list of (arc index, entry, proc_start, proc_end, tail_arrival)
    visits: dict[int, list[tuple[int, float, float, float, float]]]
    arrival: dict[int, float]

    def records(self, k: int) -> list[ArcVisit]:
        arcs = self.pinst.base.arcs
        return [ArcVisit(k, arcs[e].id, *rest) for e, *rest in self.visits[k]]

    def node_departures(self, k: int) -> list[float]:
        """Departure time from every node of the packet's path (sink: arrival)."""
        return [v[1] for v in self.visits[k]] + [self.arrival[k]]

    def csv_rows(self) -> list[tuple[int, str, float, float, float, float]]:
        rows = []
        for k in sorted(self.visits):
            for r in self.records(k):
                rows.append((k, r.arc, r.entry, r.proc_start, r.proc_end, r.tail_arrival))
        return rows


# -- simulation core --------------------------------------------------------------------


class _Simulator:
    def __init__(self, pinst: PacketInstance) -> None:
        inst = pinst.base
        self.pinst = pinst
        self.inst = inst
        self.service = [pinst.beta / a.nu for a in inst.arcs]
        self.taus = [a.tau for a in inst.arcs]
        self.eta = inst.eta

    def arc_path(self, path: Sequence[str]) -> tuple[int, ...]:
        inst = self.inst
        node = inst.source
        seen = {node}
        out = []
        for arc_id in path:
            if arc_id not in inst.arc_index:
                raise PacketError(f"unknown arc {arc_id!r}")
            a = inst.arc(arc_id)
            if a.tail != node or a.head in seen:
                raise PacketError(f"path {list(path)} is not a simple walk from the source")
            seen.add(a.head)
            node = a.head
            out.append(inst.arc_index[arc_id])
        if node != inst.sink:
            raise PacketError(f"path {list(path)} does not reach the sink")
        return tuple(out)

    def run(
        self,
        paths: dict[int, tuple[int, ...]],
        heap: list[tuple[float, int, int]],
        releases: list[int],
        free: list[float],
        visits: dict[int, list],
        arrival: dict[int, float],
        stop: int | None = None,
    ) -> float | None:
        """Advance the event heap; ``releases`` are packets not yet released, in order."""
        service, taus, eta = self.service, self.taus, self.eta
        release = self.pinst.release
        r = 0
        heapq.heapify(heap)
        while heap or r < len(releases):
            while r < len(releases) and (not heap or release(releases[r]) <= heap[0][0] + eta):
                k = releases[r]
                heapq.heappush(heap, (release(k), k, 0))
                r += 1
            t0 = heap[0][0]
            group = []
            while heap and heap[0][0] <= t0 + eta:
                group.append(heapq.heappop(heap))
            while r < len(releases) and release(releases[r]) <= t0 + eta:
                k = releases[r]
                group.append((release(k), k, 0))
                r += 1
            group.sort(key=lambda g: (paths[g[1]][g[2]], g[1]))
            for t, k, pos in group:
                e = paths[k][pos]
                start = t if t >= free[e] else free[e]
                end = start + service[e]
                arr = end + taus[e]
                free[e] = end
                visits.setdefault(k, []).append((e, t, start, end, arr))
                if pos + 1 == len(paths[k]):
                    arrival[k] = arr
                    if k == stop:
                        return arr
                else:
                    heapq.heappush(heap, (arr, k, pos + 1))
        return None

    def full(self, paths: dict[int, tuple[int, ...]], upto: int | None = None) -> PacketOutcome:
        ks = [k for k in self.pinst.indices if upto is None or k <= upto]
        free = [-math.inf] * self.inst.m
        visits: dict[int, list] = {}
        arrival: dict[int, float] = {}
        self.run(paths, [], ks, free, visits, arrival)
        return PacketOutcome(self.pinst, dict(paths), visits, arrival)

    def state_before(self, base: PacketOutcome, k: int):
        """Event state just before packet ``k`` is released, taken from ``base``."""
        cutoff = self.pinst.release(k) - self.eta
        free = [-math.inf] * self.inst.m
        heap: list[tuple[float, int, int]] = []
        fixed: dict[int, list] = {}
        for j, arr in base.arrival.items():
            if j == k or self.pinst.release(j) >= cutoff or arr <= cutoff:
                continue
            vs = base.visits[j]
            n_fixed = 0
            while n_fixed < len(vs) and vs[n_fixed][1] < cutoff:
                n_fixed += 1
            prefix = vs[:n_fixed]
            for e, _, _, end, _ in prefix:
                if end > free[e]:
                    free[e] = end
            fixed[j] = prefix
            if n_fixed < len(vs):
                heap.append((prefix[-1][4], j, n_fixed))
        return heap, free, fixed

    def resimulate(
        self,
        base: PacketOutcome,
        paths: dict[int, tuple[int, ...]],
        k: int,
        *,
        stop: bool,
        upto: int | None = None,
        state=None,
    ) -> tuple[float, PacketOutcome | None]:
        """Replay from the release of ``k`` with ``paths``; earlier events are kept from ``base``."""
        heap, free, fixed = state if state is not None else self.state_before(base, k)
        heap = list(heap)
        free = list(free)
        visits = {j: list(v) for j, v in fixed.items()}
        arrival: dict[int, float] = {}
        last = self.pinst.packet_count if upto is None else upto
        releases = [j for j in range(k, last + 1) if j >= self.pinst.first]
        got = self.run(paths, heap, releases, free, visits, arrival, stop=k if stop else None)
        if stop:
            return float(got), None
        merged_visits = dict(base.visits)
        merged_arrival = dict(base.arrival)
        merged_visits.update(visits)
        merged_arrival.update(arrival)
        return merged_arrival[k], PacketOutcome(self.pinst, dict(paths), merged_visits, merged_arrival)


def simulate_packets(pinst: PacketInstance, prof: PacketProfile) -> PacketOutcome:
    sim = _Simulator(pinst)
    missing = [k for k in pinst.indices if k not in prof.paths]
    if missing:
        raise PacketError(f"profile misses packets {missing[:5]}")
    paths = {k: sim.arc_path(prof.paths[k]) for k in pinst.indices}
    return sim.full(paths)


# -- best responses ------------------------------------------------------------------------


@dataclass(frozen=True)
class BestResponse:
    packet: int
    path: tuple[str, ...]
    arrival: float
    current_arrival: float

    @property
    def improvement(self) -> float:
        return self.current_arrival - self.arrival


def _choose(inst: Instance, options: list[tuple[float, tuple[str, ...]]]) -> tuple[float, tuple[str, ...]]:
    best = min(a for a, _ in options)
    ties = [p for a, p in options if a <= best + inst.eta]
    path = min(ties)
    return dict((p, a) for a, p in options)[path], path


def _heuristic_path(sim: _Simulator, base: PacketOutcome, k: int) -> tuple[str, ...]:
    """Time-dependent Dijkstra against the other packets' fixed schedules."""
    inst = sim.inst
    eta = sim.eta
    sched: dict[int, list[tuple[float, int, float]]] = {}
    for j, vs in base.visits.items():
        if j == k:
            continue
        for e, entry, _, end, _ in vs:
            sched.setdefault(e, []).append((entry, j, end))
    for lst in sched.values():
        lst.sort()

    def traverse(e: int, t: float) -> float:
        start = t
        for entry, j, end in sched.get(e, ()):
            if entry < t - eta or (abs(entry - t) <= eta and j < k):
                start = max(start, end)
            elif entry > t + eta:
                break
        return start + sim.service[e] + sim.taus[e]

    dist = {inst.source: sim.pinst.release(k)}
    prev: dict[str, tuple[str, str]] = {}
    heap = [(dist[inst.source], inst.source)]
    done = set()
    while heap:
        d, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        for a in sorted(inst.out_arcs(v), key=lambda a: a.id):
            arr = traverse(inst.arc_index[a.id], d)
            if arr < dist.get(a.head, math.inf) - eta:
                dist[a.head] = arr
                prev[a.head] = (v, a.id)
                heapq.heappush(heap, (arr, a.head))
    path = []
    v = inst.sink
    while v != inst.source:
        v, arc_id = prev[v]
        path.append(arc_id)
    return tuple(reversed(path))


def best_response(
    pinst: PacketInstance,
    prof: PacketProfile,
    k: int,
    *,
    mode: str = "exact",
    path_cap: int = 10_000,
    baseline: PacketOutcome | None = None,
    candidates: list[tuple[str, ...]] | None = None,
    upto: int | None = None,
) -> BestResponse:
    """Best path for packet ``k`` given everyone else's paths."""
    if k not in pinst.indices:
        raise PacketError(f"packet {k} outside 1..{pinst.packet_count}")
    sim = _Simulator(pinst)
    paths = {j: sim.arc_path(p) for j, p in prof.paths.items() if upto is None or j <= upto}
    base = baseline if baseline is not None else sim.full(paths, upto)
    current = base.arrival[k]
    if mode == "heuristic":
        path = _heuristic_path(sim, base, k)
        trial = dict(paths)
        trial[k] = sim.arc_path(path)
        arr, _ = sim.resimulate(base, trial, k, stop=True, upto=upto)
        if arr > current + pinst.base.eta:
            return BestResponse(k, tuple(prof.paths[k]), current, current)
        return BestResponse(k, path, arr, current)
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    try:
        options_paths = candidates if candidates is not None else simple_paths(pinst.base, path_cap)
    except ValueError as exc:
        raise PacketError(f"path cap exceeded: {exc}") from exc
    state = sim.state_before(base, k)
    options = []
    for p in options_paths:
        trial = dict(paths)
        trial[k] = sim.arc_path(p)
        arr, _ = sim.resimulate(base, trial, k, stop=True, upto=upto, state=state)
        options.append((arr, tuple(p)))
    arr, path = _choose(pinst.base, options)
    return BestResponse(k, path, arr, current)


@dataclass(frozen=True)
class EquilibriumStatus:
    converged: bool
    rounds: int
    max_improvement: float
    switches: int = 0

    def as_dict(self) -> dict[str, Any]:
        return {
            "converged": self.converged,
            "rounds": self.rounds,
            "max_improvement": self.max_improvement,
            "switches": self.switches,
        }


def find_packet_equilibrium(
    pinst: PacketInstance,
    max_rounds: int = 20,
    *,
    mode: str = "exact",
    path_cap: int = 10_000,
) -> tuple[PacketProfile, EquilibriumStatus]:
    """Greedy insertion by index, then best-response rounds until nobody improves."""
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    sim = _Simulator(pinst)
    eta = pinst.base.eta
    candidates = simple_paths(pinst.base, path_cap)
    arc_paths = {p: sim.arc_path(p) for p in candidates}
    chosen: dict[int, tuple[str, ...]] = {}
    base: PacketOutcome | None = None
    for k in pinst.indices:
        options = []
        for p in candidates:
            trial = {j: arc_paths[q] for j, q in chosen.items()}
            trial[k] = arc_paths[p]
            if base is None:
                out = sim.full(trial, upto=k)
                options.append((out.arrival[k], p))
            else:
                arr, _ = sim.resimulate(base, trial, k, stop=True, upto=k)
                options.append((arr, p))
        _, path = _choose(pinst.base, options)
        chosen[k] = path
        trial = {j: arc_paths[q] for j, q in chosen.items()}
        if base is None:
            base = sim.full(trial, upto=k)
        else:
            _, base = sim.resimulate(base, trial, k, stop=False, upto=k)

    prof = PacketProfile(chosen)
    paths = {j: arc_paths[q] for j, q in chosen.items()}
    base = sim.full(paths)
    switches = 0
    worst = 0.0
    for rnd in range(1, max_rounds + 1):
        worst = 0.0
        moved = False
        for k in pinst.indices:
            br = best_response(pinst, prof, k, mode=mode, baseline=base, candidates=candidates)
            worst = max(worst, br.improvement)
            if br.improvement > eta:
                prof = prof.with_path(k, br.path)
                paths[k] = arc_paths[br.path]
                _, base = sim.resimulate(base, paths, k, stop=False)
                moved = True
                switches += 1
        if not moved:
            return prof, EquilibriumStatus(True, rnd, worst, switches)
    return prof, EquilibriumStatus(False, max_rounds, worst, switches)


def br_residual(pinst: PacketInstance, prof: PacketProfile, packets: Sequence[int] | None = None) -> float:
    """Largest exact best-response improvement over the given packets."""
    sim = _Simulator(pinst)
    paths = {j: sim.arc_path(p) for j, p in prof.paths.items()}
    base = sim.full(paths)
    candidates = simple_paths(pinst.base)
    ks = list(pinst.indices) if packets is None else list(packets)
    return max(best_response(pinst, prof, k, baseline=base, candidates=candidates).improvement for k in ks)


# -- embedding -----------------------------------------------------------------------------


def embed_packets(pinst: PacketInstance, prof: PacketProfile, out: PacketOutcome | None = None) -> list[StrategyClass]:
    """Continuum classes whose loading reproduces the packet schedule."""
    inst = pinst.base
    beta, u0 = pinst.beta, inst.u0
    classes = []
    for k in pinst.indices:
        path = tuple(prof.paths[k])
        waiting = [Affine(beta / u0, -1.0 / u0)]
        for arc_id in path:
            nu = inst.arc(arc_id).nu
            waiting.append(Affine(beta / nu, -1.0 / nu))
        if k == 0:
            waiting[0] = Affine(0.0, 0.0)
            classes.append(StrategyClass.atom(path, 0.0, beta, waiting))
        else:
            classes.append(StrategyClass.interval(path, (k - 1) * beta / u0, k * beta / u0, u0, waiting))
    return classes


def default_packet_count(inst: Instance, beta: float, theta_max: float) -> int:
    """Enough packets that releases run past ``theta_max`` plus the free-flow diameter."""
    from .instance import empty_network_labels

    diameter = float(np.max(empty_network_labels(inst)))
    return int(math.ceil((theta_max + diameter) * inst.u0 / beta)) + 1
