"""Network loading for finite families of agent classes.

Every class sends its agents along one path.  Agents are indexed by a mass
coordinate ``mu`` in ``[0, mass]``; an interval class enters the network at
rate ``rate`` over ``[start, end)`` (so entry time is ``start + mu / rate``),
an atom class enters all at once at ``start``.  Waiting at each path node is
affine in ``mu``.

Loading sweeps time in windows of length ``min tau``: arc entries inside a
window only depend on queue states from earlier windows, so each arc can be
resolved on its own.  All departure times stay piecewise linear in ``mu``.
"""

from __future__ import annotations

import bisect
import heapq
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

from .instance import Arc, Instance
from .piecewise import PLFunction
from .thinflow import GeneralizedSubnetwork, ThinFlow

#: Two arc-entry times closer than this are one atom.
ATOM_TOL = 1e-11


class LoadingError(ValueError):
    pass


@dataclass(frozen=True)
class Affine:
    offset: float = 0.0
    slope: float = 0.0

    def __call__(self, x: float) -> float:
        return self.offset + self.slope * x


@dataclass(frozen=True)
class StrategyClass:
    """Agents sharing a path; ``waiting[i]`` is the wait at the i-th path node as a function of ``mu``."""

    path: tuple[str, ...]
    start: float
    end: float | None = None
    rate: float = 0.0
    mass: float = 0.0
    waiting: tuple[Affine, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "path", tuple(self.path))
        if not self.waiting:
            object.__setattr__(self, "waiting", tuple(Affine() for _ in range(len(self.path) + 1)))
        if len(self.waiting) != len(self.path) + 1:
            raise LoadingError("waiting needs one entry per path node")
        if self.end is not None:
            if not self.end > self.start:
                raise LoadingError(f"empty entry interval [{self.start}, {self.end})")
            if not self.rate > 0:
                raise LoadingError("interval classes need a positive rate")
            object.__setattr__(self, "mass", self.rate * (self.end - self.start))
        elif not self.mass > 0:
            raise LoadingError("atom classes need a positive mass")

    @classmethod
    def interval(cls, path: Sequence[str], start: float, end: float, rate: float,
                 waiting: Sequence[Affine] | None = None) -> StrategyClass:
        return cls(tuple(path), float(start), float(end), float(rate), 0.0, tuple(waiting or ()))

    @classmethod
    def atom(cls, path: Sequence[str], time: float, mass: float,
             waiting: Sequence[Affine] | None = None) -> StrategyClass:
        return cls(tuple(path), float(time), None, 0.0, float(mass), tuple(waiting or ()))

    @property
    def is_atom(self) -> bool:
        return self.end is None

    def entry_time(self, mu: float) -> float:
        return self.start if self.end is None else self.start + mu / self.rate

    def mu_of(self, theta: float) -> float:
        return 0.0 if self.end is None else (theta - self.start) * self.rate

    @staticmethod
    def waiting_from_entry_time(start: float, rate: float, offset: float, slope: float) -> Affine:
        """Convert ``w(theta) = offset + slope * theta`` to the mass coordinate."""
        return Affine(offset + slope * start, slope / rate)

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"path": list(self.path)}
        if self.is_atom:
            doc["atom"] = {"time": self.start, "mass": self.mass}
        else:
            doc["interval"] = {"start": self.start, "end": self.end, "rate": self.rate}
        doc["waiting"] = [{"offset": w.offset, "mass_slope": w.slope} for w in self.waiting]
        return doc

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> StrategyClass:
        path = tuple(doc["path"])
        raw = doc.get("waiting")
        if "atom" in doc:
            start, end, rate, mass = float(doc["atom"]["time"]), None, 0.0, float(doc["atom"]["mass"])
        else:
            iv = doc["interval"]
            start, end, rate, mass = float(iv["start"]), float(iv["end"]), float(iv["rate"]), 0.0
        waiting: list[Affine] = []
        for w in raw or ():
            if "mass_slope" in w:
                waiting.append(Affine(float(w["offset"]), float(w["mass_slope"])))
            else:  # affine in entry time
                if end is None:
                    raise LoadingError("atom classes take waiting in mass_slope form")
                waiting.append(cls.waiting_from_entry_time(start, rate, float(w["offset"]), float(w.get("slope", 0.0))))
        return cls(path, start, end, rate, mass, tuple(waiting))


# -- outcome ------------------------------------------------------------------------


@dataclass
class ArcFlow:
    """Cumulative inflow and queue of one arc at its breakpoints."""

    arc: Arc
    times: np.ndarray
    fin_left: np.ndarray
    fin_right: np.ndarray
    z_left: np.ndarray
    z_right: np.ndarray

    def _pl(self, left: np.ndarray, right: np.ndarray) -> PLFunction:
        if len(self.times) == 0:
            return PLFunction(np.array([0.0]), np.array([0.0]), np.array([0.0]), 0.0, 0.0)
        return PLFunction(self.times, left, right, 0.0, 0.0)

    @cached_property
    def inflow_fn(self) -> PLFunction:
        return self._pl(self.fin_left, self.fin_right)

    @cached_property
    def queue_fn(self) -> PLFunction:
        return self._pl(self.z_left, self.z_right)

    @cached_property
    def exit_fn(self) -> PLFunction:
        """``xi -> xi + tau + z(xi) / nu``: arrival at the head for entry at ``xi``."""
        a = self.arc
        if len(self.times) == 0:
            return PLFunction.identity(a.tau)
        t = self.times
        return PLFunction(t, t + a.tau + self.z_left / a.nu, t + a.tau + self.z_right / a.nu, 1.0, 1.0)

    def inflow(self, xi, side: str = "right"):
        return self.inflow_fn.evaluate(xi, side)

    def queue(self, xi, side: str = "right"):
        return self.queue_fn.evaluate(xi, side)

    def outflow(self, xi):
        """``F^-(xi) = F^+(xi - tau) - z(xi - tau)`` (continuous)."""
        g = np.asarray(xi, dtype=float) - self.arc.tau
        return self.inflow(g) - self.queue(g)


@dataclass
class Outcome:
    inst: Instance
    classes: tuple[StrategyClass, ...]
    arcs: tuple[ArcFlow, ...]
    # departures[c][i] = pieces (mu_a, mu_b, d_a, d_b) at the i-th node of class c's path
    departures: list[list[list[tuple[float, float, float, float]]]]
    horizon: float
    windows: int = 0

    def arc_flow(self, arc_id: str) -> ArcFlow:
        return self.arcs[self.inst.arc_index[arc_id]]

    def departure(self, c: int, pos: int, mu: float, side: str = "right") -> float:
        """Departure time from the ``pos``-th path node of the agent at ``mu`` in class ``c``."""
        pieces = self.departures[c][pos]
        best = None
        for ma, mb, da, db in pieces:
            if ma - 1e-12 <= mu <= mb + 1e-12:
                if mb - ma <= 0:
                    val = da
                else:
                    val = da + (mu - ma) / (mb - ma) * (db - da)
                if side == "right" and mu < mb:
                    return val
                if side == "left" and mu > ma:
                    return val
                best = val
        if best is None:
            raise ValueError(f"mu={mu} outside class {c}")
        return best

    def network_inflow(self, theta: float, side: str = "right") -> float:
        """Cumulative mass that has entered the network by ``theta``."""
        total = 0.0
        for c in self.classes:
            if c.is_atom:
                if c.start < theta or (side == "right" and c.start <= theta):
                    total += c.mass
            else:
                total += c.rate * min(max(theta - c.start, 0.0), c.end - c.start)
        return total

    @cached_property
    def label_functions(self) -> list[PLFunction]:
        return _label_functions(self)

    def csv_rows(self, arc_id: str) -> list[tuple[float, float, float, float]]:
        """``(time, F_in, F_out, z)`` at the breakpoints of one arc."""
        af = self.arc_flow(arc_id)
        rows = []
        for k, t in enumerate(af.times):
            rows.append((float(t), float(af.fin_right[k]), float(af.outflow(t)), float(af.z_right[k])))
        return rows


# -- loader --------------------------------------------------------------------------


@dataclass
class _ArcState:
    t_last: float | None = None
    z: float = 0.0
    F: float = 0.0
    times: list[float] = field(default_factory=list)
    fl: list[float] = field(default_factory=list)
    fr: list[float] = field(default_factory=list)
    zl: list[float] = field(default_factory=list)
    zr: list[float] = field(default_factory=list)

    def record(self, t: float, fl: float, fr: float, zl: float, zr: float) -> None:
        if self.times and t <= self.times[-1]:
            self.fr[-1], self.zr[-1] = fr, zr
            return
        self.times.append(t)
        self.fl.append(fl)
        self.fr.append(fr)
        self.zl.append(zl)
        self.zr.append(zr)


# piece: (class, path position, mu_a, mu_b, t_a, t_b) with mu_a < mu_b
Piece = tuple[int, int, float, float, float, float]


def _validate_classes(inst: Instance, classes: Sequence[StrategyClass], check_coverage: bool) -> None:
    eta = inst.eta
    for k, c in enumerate(classes):
        if not c.path:
            raise LoadingError(f"class {k}: empty path")
        node = inst.source
        seen = {node}
        for arc_id in c.path:
            if arc_id not in inst.arc_index:
                raise LoadingError(f"class {k}: unknown arc {arc_id!r}")
            a = inst.arc(arc_id)
            if a.tail != node:
                raise LoadingError(f"class {k}: arcs are not consecutive at {arc_id!r}")
            if a.head in seen:
                raise LoadingError(f"class {k}: path revisits node {a.head!r}")
            seen.add(a.head)
            node = a.head
        if node != inst.sink:
            raise LoadingError(f"class {k}: path does not end at the sink")
        for i, w in enumerate(c.waiting):
            if min(w(0.0), w(c.mass)) < -eta:
                raise LoadingError(f"class {k}: negative waiting at path node {i}")
    if not check_coverage:
        return
    changes: dict[float, float] = {}
    for c in classes:
        if not c.is_atom:
            changes[c.start] = changes.get(c.start, 0.0) + c.rate
            changes[c.end] = changes.get(c.end, 0.0) - c.rate
    if not changes:
        return
    times = sorted(changes)
    rate = 0.0
    for t0, t1 in zip(times[:-1], times[1:]):
        rate += changes[t0]
        if t1 - t0 <= eta:
            continue
        if rate < inst.u0 - 1e-7 * max(1.0, inst.u0):
            raise LoadingError(f"entry coverage gap on [{t0:g}, {t1:g}): rate {rate:g} < u0")
        if rate > inst.u0 + 1e-7 * max(1.0, inst.u0):
            raise LoadingError(f"entry coverage overlap on [{t0:g}, {t1:g}): rate {rate:g} > u0")


def load_profile(
    inst: Instance,
    classes: Sequence[StrategyClass],
    *,
    check_coverage: bool = True,
    max_windows: int = 1_000_000,
) -> Outcome:
    """Resolve all queues and departure times induced by ``classes``."""
    classes = tuple(classes)
    if not classes:
        raise LoadingError("profile has no classes")
    _validate_classes(inst, classes, check_coverage)
    eta = inst.eta
    window = float(np.min(inst.taus))
    m = inst.m
    arcs = inst.arcs
    path_idx = [[inst.arc_index[a] for a in c.path] for c in classes]
    states = [_ArcState() for _ in range(m)]
    pending: list[list[Piece]] = [[] for _ in range(m)]
    departures: list[list[list[tuple[float, float, float, float]]]] = [
        [[] for _ in range(len(c.path) + 1)] for c in classes
    ]

    for k, c in enumerate(classes):
        w = c.waiting[0]
        ta = c.entry_time(0.0) + w(0.0)
        tb = c.entry_time(c.mass) + w(c.mass)
        departures[k][0].append((0.0, c.mass, ta, tb))
        pending[path_idx[k][0]].append((k, 0, 0.0, c.mass, ta, tb))

    def emit(k: int, pos: int, m1: float, m2: float, e1: float, e2: float) -> None:
        if m2 <= m1:
            return
        arc = arcs[path_idx[k][pos]]
        w = classes[k].waiting[pos + 1]
        d1 = e1 + arc.tau + w(m1)
        d2 = e2 + arc.tau + w(m2)
        departures[k][pos + 1].append((m1, m2, d1, d2))
        if pos + 1 < len(path_idx[k]):
            pending[path_idx[k][pos + 1]].append((k, pos + 1, m1, m2, d1, d2))

    def process(e: int, pieces: list[Piece]) -> None:
        st = states[e]
        nu = arcs[e].nu
        floor = st.t_last
        atoms: list[Piece] = []
        conts: list[Piece] = []
        for p in pieces:
            k, pos, ma, mb, ta, tb = p
            if floor is not None:
                ta, tb = max(ta, floor), max(tb, floor)
            if abs(tb - ta) <= ATOM_TOL:
                t = min(ta, tb)
                atoms.append((k, pos, ma, mb, t, t))
            else:
                conts.append((k, pos, ma, mb, ta, tb))
        atoms.sort(key=lambda p: p[4])
        groups: list[tuple[float, list[Piece]]] = []
        for p in atoms:
            if groups and p[4] - groups[-1][0] <= eta:
                groups[-1][1].append(p)
            else:
                groups.append((p[4], [p]))
        group_at = {t: g for t, g in groups}
        rate_change: dict[float, float] = {}
        events = set(group_at)
        for k, pos, ma, mb, ta, tb in conts:
            lo, hi = min(ta, tb), max(ta, tb)
            r = (mb - ma) / (hi - lo)
            rate_change[lo] = rate_change.get(lo, 0.0) + r
            rate_change[hi] = rate_change.get(hi, 0.0) - r
            events.update((lo, hi))
        if floor is not None:
            events.add(floor)
        order = sorted(events)

        cur = order[0] if floor is None else floor
        z, F, f = st.z, st.F, 0.0
        local_t: list[float] = []
        local_zl: list[float] = []
        local_zr: list[float] = []
        for T in order:
            if T > cur:
                span = T - cur
                if f < nu and z > 0 and z < (nu - f) * span:
                    t_empty = cur + z / (nu - f)
                    F_empty = F + f * (t_empty - cur)
                    st.record(t_empty, F_empty, F_empty, 0.0, 0.0)
                    local_t.append(t_empty)
                    local_zl.append(0.0)
                    local_zr.append(0.0)
                    z = 0.0
                elif z > 0 or f > nu:
                    z = max(0.0, z + (f - nu) * span)
                F += f * span
            zl, Fl = z, F
            group = group_at.get(T)
            if group:
                z += _serve_group(classes, group, T, zl, nu, emit)
                F += sum(p[3] - p[2] for p in group)
            f += rate_change.get(T, 0.0)
            if abs(f) < 1e-13:
                f = 0.0
            st.record(T, Fl, F, zl, z)
            if local_t and T <= local_t[-1]:
                local_zr[-1] = z
            else:
                local_t.append(T)
                local_zl.append(zl)
                local_zr.append(z)
            cur = T
        st.t_last, st.z, st.F = cur, z, F

        for k, pos, ma, mb, ta, tb in conts:
            lo, hi = min(ta, tb), max(ta, tb)
            i0 = bisect.bisect_left(local_t, lo)
            i1 = bisect.bisect_left(local_t, hi)
            scale = (mb - ma) / (tb - ta)
            for i in range(i0, i1):
                t1, t2 = local_t[i], local_t[i + 1]
                e1 = t1 + local_zr[i] / nu
                e2 = t2 + local_zl[i + 1] / nu
                m1 = ma + (t1 - ta) * scale
                m2 = ma + (t2 - ta) * scale
                if m1 <= m2:
                    emit(k, pos, m1, m2, e1, e2)
                else:
                    emit(k, pos, m2, m1, e2, e1)

    windows = 0
    while True:
        starts = [min(p[4], p[5]) for lst in pending for p in lst]
        if not starts:
            break
        windows += 1
        if windows > max_windows:
            raise LoadingError(f"event-queue overflow: more than {max_windows} windows")
        a = min(starts)
        b = a + window
        for e in range(m):
            if not pending[e]:
                continue
            take: list[Piece] = []
            keep: list[Piece] = []
            for p in pending[e]:
                k, pos, ma, mb, ta, tb = p
                lo, hi = min(ta, tb), max(ta, tb)
                if lo >= b - ATOM_TOL:
                    keep.append(p)
                elif hi <= b + ATOM_TOL:
                    take.append(p)
                else:
                    mc = ma + (b - ta) * (mb - ma) / (tb - ta)
                    if ta < tb:
                        take.append((k, pos, ma, mc, ta, b))
                        keep.append((k, pos, mc, mb, b, tb))
                    else:
                        take.append((k, pos, mc, mb, b, tb))
                        keep.append((k, pos, ma, mc, ta, b))
            pending[e] = keep
            if take:
                process(e, take)

    flows = []
    for e, st in enumerate(states):
        if st.t_last is not None and st.z > 0:
            t = st.t_last + st.z / arcs[e].nu
            st.record(t, st.F, st.F, 0.0, 0.0)
        flows.append(ArcFlow(arcs[e], np.array(st.times), np.array(st.fl), np.array(st.fr),
                             np.array(st.zl), np.array(st.zr)))
    for per_class in departures:
        for lst in per_class:
            lst.sort()
    intervals = [c.end for c in classes if not c.is_atom]
    horizon = max(intervals) if intervals else max(c.start for c in classes)
    return Outcome(inst, classes, tuple(flows), departures, float(horizon), windows)


def _serve_group(classes, group: list[Piece], T: float, base: float, nu: float, emit) -> float:
    """Queue-exit times for simultaneous arrivals, ordered by (entry time, class, mu)."""
    info = []
    for p in group:
        k, pos, ma, mb, _, _ = p
        c = classes[k]
        info.append((p, c.entry_time(ma), c.entry_time(mb)))

    def ahead(idx: int, mu: float, mid: float) -> float:
        p, _, _ = info[idx]
        k = p[0]
        c = classes[k]
        th = c.entry_time(mu)
        th_mid = c.entry_time(mid)
        total = mu - p[2]
        for j, (q, qa, qb) in enumerate(info):
            if j == idx:
                continue
            kq = q[0]
            qmass = q[3] - q[2]
            if kq == k:
                if q[3] <= p[2] + 1e-15:
                    total += qmass
                continue
            if qb - qa <= 1e-15:
                if qa < th_mid or (qa == th_mid and kq < k):
                    total += qmass
            else:
                total += qmass * min(max((th - qa) / (qb - qa), 0.0), 1.0)
        return total

    mass = 0.0
    for idx, (p, tha, thb) in enumerate(info):
        k, pos, ma, mb, _, _ = p
        mass += mb - ma
        c = classes[k]
        cuts = {ma, mb}
        if thb > tha:
            for j, (q, qa, qb) in enumerate(info):
                if j != idx and q[0] != k:
                    for th in (qa, qb):
                        if tha < th < thb:
                            cuts.add(c.mu_of(th))
        pts = sorted(cuts)
        for m1, m2 in zip(pts[:-1], pts[1:]):
            mid = 0.5 * (m1 + m2)
            h1 = ahead(idx, m1, mid)
            h2 = ahead(idx, m2, mid)
            emit(k, pos, m1, m2, T + (base + h1) / nu, T + (base + h2) / nu)
    return mass


# -- earliest-arrival labels -----------------------------------------------------------


def _check_theta(out: Outcome, theta: float) -> None:
    if theta > out.horizon + out.inst.eta:
        raise ValueError(f"query beyond horizon: theta={theta} > {out.horizon}")


def earliest_arrival_labels(inst: Instance, out: Outcome, theta: float) -> np.ndarray:
    """Bellman labels at entry time ``theta`` by time-dependent Dijkstra."""
    _check_theta(out, theta)
    dist = np.full(inst.n, math.inf)
    dist[inst.s] = theta
    out_arcs: dict[int, list[int]] = {}
    for i, a in enumerate(inst.arcs):
        out_arcs.setdefault(inst.node_index[a.tail], []).append(i)
    heap = [(theta, inst.s)]
    done = set()
    while heap:
        d, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        for i in out_arcs.get(v, ()):
            w = inst.node_index[inst.arcs[i].head]
            arrival = out.arcs[i].exit_fn.evaluate(d, "right")
            if arrival < dist[w]:
                dist[w] = arrival
                heapq.heappush(heap, (arrival, w))
    return dist


def _label_functions(out: Outcome) -> list[PLFunction]:
    """Labels as exact functions of entry time: ``l_w = min_e A_e ∘ l_v``."""
    inst = out.inst
    labels: list[PLFunction | None] = [None] * inst.n
    labels[inst.s] = PLFunction.identity()
    into: dict[int, list[int]] = {}
    for i, a in enumerate(inst.arcs):
        into.setdefault(inst.node_index[a.head], []).append(i)
    for _ in range(inst.n):
        changed = False
        for w in range(inst.n):
            if w == inst.s:
                continue
            best: PLFunction | None = None
            for i in into.get(w, ()):
                v = inst.node_index[inst.arcs[i].tail]
                if labels[v] is None:
                    continue
                cand = out.arcs[i].exit_fn.compose(labels[v])
                best = cand if best is None else best.minimum(cand)
            if best is None:
                continue
            old = labels[w]
            if (
                old is None
                or len(old.xs) != len(best.xs)
                or not np.array_equal(old.xs, best.xs)
                or not np.allclose(old.right, best.right, rtol=0, atol=1e-13)
                or not np.allclose(old.left, best.left, rtol=0, atol=1e-13)
            ):
                labels[w] = best
                changed = True
        if not changed:
            break
    return [f if f is not None else PLFunction.identity(math.inf) for f in labels]


def label_function(out: Outcome, node: str) -> PLFunction:
    return out.label_functions[out.inst.node_index[node]]


# -- equilibrium meters -----------------------------------------------------------------


def _gap_on_class(out: Outcome, c: int, pos: int, theta_max: float | None) -> float:
    """``sup (d_v - l_v)`` over the members of class ``c`` at its ``pos``-th node."""
    cls = out.classes[c]
    path_nodes = [out.inst.source] + [out.inst.arc(a).head for a in cls.path]
    ell = out.label_functions[out.inst.node_index[path_nodes[pos]]]
    pieces = out.departures[c][pos]
    best = -math.inf
    if cls.is_atom:
        if theta_max is not None and cls.start > theta_max:
            return best
        top = max(max(da, db) for _, _, da, db in pieces)
        return top - ell.evaluate(cls.start, "right")
    for ma, mb, da, db in pieces:
        ta, tb = cls.entry_time(ma), cls.entry_time(mb)
        if theta_max is not None:
            if ta > theta_max:
                continue
            if tb > theta_max:
                db = da + (theta_max - ta) / (tb - ta) * (db - da)
                tb = theta_max
        if tb <= ta:
            continue
        best = max(best, da - ell.evaluate(ta, "right"), db - ell.evaluate(tb, "left"))
        i0 = np.searchsorted(ell.xs, ta, side="right")
        i1 = np.searchsorted(ell.xs, tb, side="left")
        if i1 > i0:
            x = ell.xs[i0:i1]
            d = da + (x - ta) / (tb - ta) * (db - da)
            best = max(best, float(np.max(d - ell.left[i0:i1])))
    return best


def measure_epsilon(inst: Instance, out: Outcome, theta_max: float | None = None) -> float:
    """Largest gap between sink departure and earliest possible arrival."""
    gaps = [_gap_on_class(out, c, len(cls.path), theta_max) for c, cls in enumerate(out.classes)]
    return max(0.0, max(gaps))


def measure_strict_delta(inst: Instance, out: Outcome, theta_max: float | None = None) -> float:
    """Largest gap between departure and earliest arrival over all path nodes."""
    best = 0.0
    for c, cls in enumerate(out.classes):
        for pos in range(len(cls.path) + 1):
            best = max(best, _gap_on_class(out, c, pos, theta_max))
    return best


def measure_overtaking(inst: Instance, out: Outcome, c: int, node: str) -> float:
    """Mass entering after the first member of ``c`` that could reach ``node`` before it leaves."""
    cls = out.classes[c]
    path_nodes = [inst.source] + [inst.arc(a).head for a in cls.path]
    if node not in path_nodes:
        raise ValueError(f"node {node!r} not on the path of class {c}")
    pos = path_nodes.index(node)
    theta_a = cls.start
    d = out.departure(c, pos, 0.0)
    ell = out.label_functions[inst.node_index[node]]
    theta_star = ell.first_reach(d - inst.eta)
    if theta_star <= theta_a:
        return 0.0
    theta_star = min(theta_star, out.horizon)
    return max(0.0, out.network_inflow(theta_star, "left") - out.network_inflow(theta_a, "right"))


@dataclass(frozen=True)
class ThinFlowResiduals:
    allowed_excess: float
    forced_mismatch: float
    outside_flow: float
    imbalance: float
    direction_gap: float
    delta_labels: np.ndarray
    delta_x: np.ndarray

    def as_dict(self) -> dict[str, float]:
        return {
            "allowed_excess": self.allowed_excess,
            "forced_mismatch": self.forced_mismatch,
            "outside_flow": self.outside_flow,
            "imbalance": self.imbalance,
            "direction_gap": self.direction_gap,
        }


def thin_flow_residuals(
    inst: Instance,
    out: Outcome,
    theta_a: float,
    theta_b: float,
    sub: GeneralizedSubnetwork | None = None,
    reference: ThinFlow | None = None,
) -> ThinFlowResiduals:
    """How far the loaded flow over ``(theta_a, theta_b]`` is from a thin flow."""
    if not theta_a < theta_b:
        raise ValueError("need theta_a < theta_b")
    sub = sub or GeneralizedSubnetwork.full(inst)
    la = np.array([f.evaluate(theta_a) for f in out.label_functions])
    lb = np.array([f.evaluate(theta_b) for f in out.label_functions])
    dl = lb - la
    dx = np.zeros(inst.m)
    tails, heads, nus = inst.tails, inst.heads, inst.nus
    for i in range(inst.m):
        v = tails[i]
        dx[i] = out.arcs[i].inflow(lb[v]) - out.arcs[i].inflow(la[v])
    allowed = forced = outside = 0.0
    for i, a in enumerate(inst.arcs):
        r = dx[i] - nus[i] * dl[heads[i]]
        if a.id in sub.forced_queue:
            forced = max(forced, abs(r))
        if a.id in sub.allowed:
            allowed = max(allowed, r)
        else:
            outside = max(outside, dx[i])
    net = np.zeros(inst.n)
    np.add.at(net, tails, dx)
    np.subtract.at(net, heads, dx)
    demand = np.zeros(inst.n)
    dtheta = theta_b - theta_a
    demand[inst.s] = inst.u0 * dtheta
    demand[inst.t] = -inst.u0 * dtheta
    imbalance = float(np.max(np.abs(net - demand)))
    gap = float(np.max(np.abs(dl / dtheta - reference.lam))) if reference is not None else math.nan
    return ThinFlowResiduals(allowed, forced, outside, imbalance, gap, dl, dx)


# -- invariant report --------------------------------------------------------------------


def capacity_identity_queue(af: ArcFlow, xi: float) -> float:
    """Queue from the capacity identity ``max(0, sup_psi F(xi) - F(psi-) - nu (xi - psi))``."""
    nu = af.arc.nu
    F = af.inflow_fn
    Fx = F.evaluate(xi, "right")
    best = 0.0
    ts = af.times[af.times <= xi]
    if len(ts):
        best = max(best, float(np.max(Fx - F.evaluate(ts, "left") - nu * (xi - ts))))
    best = max(best, Fx - F.evaluate(xi, "left"))
    return best


def _capacity_identity_many(af: ArcFlow, xs: np.ndarray) -> np.ndarray:
    """Vector form of :func:`capacity_identity_queue`."""
    nu, F, t = af.arc.nu, af.inflow_fn, af.times
    fx = F.evaluate(xs, "right")
    best = np.maximum(0.0, fx - F.evaluate(xs, "left"))
    span = fx[:, None] - F.evaluate(t, "left")[None, :] - nu * (xs[:, None] - t[None, :])
    span = np.where(t[None, :] <= xs[:, None], span, -np.inf)
    return np.maximum(best, np.max(span, axis=1, initial=0.0))


def outcome_residuals(out: Outcome, samples: int = 100, seed: int = 0) -> dict[str, float]:
    """Largest violation of each loading invariant (0 means it holds exactly)."""
    inst = out.inst
    rng = np.random.default_rng(seed)
    res = {
        "monotone": 0.0,
        "queue_nonnegative": 0.0,
        "queue_identity": 0.0,
        "capacity": 0.0,
        "conservation": 0.0,
        "fifo": 0.0,
    }
    probe_times: list[np.ndarray] = []
    for af in out.arcs:
        if len(af.times) == 0:
            continue
        t = af.times
        probe_times += [t, t + af.arc.tau]
        res["monotone"] = max(res["monotone"], float(np.max(af.fin_left - af.fin_right, initial=0.0)))
        if len(t) > 1:
            res["monotone"] = max(res["monotone"], float(np.max(af.fin_right[:-1] - af.fin_left[1:])))
        res["queue_nonnegative"] = max(res["queue_nonnegative"], float(-min(af.z_left.min(), af.z_right.min())))
        lo, hi = float(t[0]), float(t[-1])
        sample = np.sort(np.concatenate([t, rng.uniform(lo, hi + 1.0, size=samples)]))
        gap = np.abs(af.queue(sample) - _capacity_identity_many(af, sample))
        res["queue_identity"] = max(res["queue_identity"], float(np.max(gap)))
        # F^-(xi + tau) <= F^+(xi)
        excess = af.outflow(sample + af.arc.tau) - af.inflow(sample)
        res["capacity"] = max(res["capacity"], float(np.max(excess)))
        arrival = af.exit_fn.evaluate(sample)
        res["fifo"] = max(res["fifo"], float(np.max(-np.diff(arrival), initial=0.0)))
    if probe_times:
        xs = np.unique(np.concatenate(probe_times))
        balance = np.zeros((inst.n, len(xs)))
        for i, (a, af) in enumerate(zip(inst.arcs, out.arcs)):
            balance[inst.tails[i]] += af.inflow(xs)
            balance[inst.heads[i]] -= af.outflow(xs)
        balance[inst.s] -= [out.network_inflow(x) for x in xs]
        res["conservation"] = max(0.0, float(np.max(balance)))
    return res


def lipschitz_violation(out: Outcome, grid: Iterable[float], epsilon: float) -> float:
    """Largest excess of ``l_v(b) - l_v(a)`` over ``K (b - a) + j epsilon`` on grid pairs."""
    inst = out.inst
    K = inst.kappa * inst.n
    j = 3 * K * inst.nu_sum
    grid = np.asarray(sorted(grid), dtype=float)
    worst = -math.inf
    for f in out.label_functions:
        vals = f.evaluate(grid)
        diff = vals[None, :] - vals[:, None]
        span = grid[None, :] - grid[:, None]
        mask = span > 0
        excess = diff[mask] - K * span[mask] - j * epsilon
        if excess.size:
            worst = max(worst, float(np.max(excess)))
    return worst
