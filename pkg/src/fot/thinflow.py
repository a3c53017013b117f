"""Configurations and thin flows.

A configuration is a pair (active arcs, resetting arcs).  For a valid
configuration the thin flow conditions have a unique label derivative
``lam`` (the flow ``x`` need not be unique).  ``solve_thin_flow`` finds it by
iterating on arc statuses; ``thin_flow_oracle`` finds it by brute-force
enumeration of supports and case splits and is only meant for small inputs.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ._maxflow import feasible_flow
from .instance import Instance


class ThinFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class Configuration:
    active: frozenset[str]
    resetting: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "active", frozenset(self.active))
        object.__setattr__(self, "resetting", frozenset(self.resetting))
        if not self.resetting <= self.active:
            extra = sorted(self.resetting - self.active)
            raise ValueError(f"resetting arcs {extra} are not active")

    def to_json(self) -> dict[str, list[str]]:
        return {"active": sorted(self.active), "resetting": sorted(self.resetting)}

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> Configuration:
        return cls(frozenset(doc["active"]), frozenset(doc.get("resetting", ())))


@dataclass(frozen=True)
class GeneralizedSubnetwork:
    """Arcs outside ``allowed`` never activate; arcs in ``forced_queue`` always queue."""

    allowed: frozenset[str]
    forced_queue: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "allowed", frozenset(self.allowed))
        object.__setattr__(self, "forced_queue", frozenset(self.forced_queue))
        if not self.forced_queue <= self.allowed:
            raise ValueError("forced_queue must be a subset of allowed")

    @classmethod
    def full(cls, inst: Instance) -> GeneralizedSubnetwork:
        return cls(frozenset(a.id for a in inst.arcs))

    def as_configuration(self) -> Configuration:
        return Configuration(self.allowed, self.forced_queue)

    @property
    def free(self) -> frozenset[str]:
        """Arcs that own a hyperplane in this subnetwork."""
        return self.allowed - self.forced_queue


@dataclass(frozen=True)
class ThinFlow:
    x: np.ndarray
    lam: np.ndarray
    method: str = "iteration"
    iterations: int = 0

    def to_json(self, inst: Instance) -> dict[str, dict[str, float]]:
        return {
            "lambda": inst.label_dict(self.lam),
            "x": {a.id: float(self.x[i]) for i, a in enumerate(inst.arcs)},
        }

    @classmethod
    def from_json(cls, inst: Instance, doc: dict[str, Any]) -> ThinFlow:
        lam = inst.labels(doc["lambda"])
        x = np.array([float(doc["x"].get(a.id, 0.0)) for a in inst.arcs])
        return cls(x, lam, method="external")


@dataclass(frozen=True)
class Validity:
    ok: bool
    violations: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok

    @property
    def witness(self) -> str | None:
        return "; ".join(self.violations) if self.violations else None


# -- configurations ------------------------------------------------------------


def classify_configuration(
    inst: Instance, l: np.ndarray, sub: GeneralizedSubnetwork | None = None, eta: float | None = None
) -> Configuration:
    """Active/resetting arcs at label ``l`` inside the generalized subnetwork ``sub``."""
    eta = inst.eta if eta is None else eta
    sub = sub or GeneralizedSubnetwork.full(inst)
    slack = l[inst.heads] - l[inst.tails] - inst.taus
    active = set(sub.forced_queue)
    resetting = set(sub.forced_queue)
    for i, a in enumerate(inst.arcs):
        if a.id not in sub.allowed:
            continue
        if slack[i] >= -eta:
            active.add(a.id)
        if slack[i] > eta:
            resetting.add(a.id)
    return Configuration(frozenset(active), frozenset(resetting))


def _reach(start: Iterable[int], adj: dict[int, list[int]]) -> set[int]:
    seen = set(start)
    stack = list(seen)
    while stack:
        v = stack.pop()
        for w in adj.get(v, ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def is_valid_configuration(inst: Instance, cfg: Configuration) -> Validity:
    """Check reachability (i), s-t coverage of resetting arcs (ii), acyclicity (iii)."""
    unknown = sorted(cfg.active - set(inst.arc_index))
    if unknown:
        return Validity(False, (f"unknown arcs {unknown}",))
    fwd: dict[int, list[int]] = {}
    bwd: dict[int, list[int]] = {}
    for arc_id in cfg.active:
        a = inst.arc(arc_id)
        v, w = inst.node_index[a.tail], inst.node_index[a.head]
        fwd.setdefault(v, []).append(w)
        bwd.setdefault(w, []).append(v)
    violations: list[str] = []
    from_s = _reach([inst.s], fwd)
    for i, v in enumerate(inst.nodes):
        if i not in from_s:
            violations.append(f"(i): node {v} unreachable from source in active arcs")
    to_t = _reach([inst.t], bwd)
    for arc_id in sorted(cfg.resetting):
        a = inst.arc(arc_id)
        v, w = inst.node_index[a.tail], inst.node_index[a.head]
        if v not in from_s or w not in to_t:
            violations.append(f"(ii): no s-t path through {arc_id}")
    for arc_id in sorted(cfg.resetting):
        a = inst.arc(arc_id)
        v, w = inst.node_index[a.tail], inst.node_index[a.head]
        if v in _reach([w], fwd):
            violations.append(f"(iii): resetting arc {arc_id} lies on a directed cycle")
    return Validity(not violations, tuple(violations))


# -- checker -------------------------------------------------------------------


@dataclass(frozen=True)
class ThinFlowReport:
    conservation: float
    flow_value: float
    source_label: float
    min_condition: float
    flow_equality: float
    support: float
    nonnegativity: float
    positivity: float
    tolerance: float = field(default=1e-9)

    @property
    def residuals(self) -> dict[str, float]:
        return {
            "conservation": self.conservation,
            "flow_value": self.flow_value,
            "source_label": self.source_label,
            "min_condition": self.min_condition,
            "flow_equality": self.flow_equality,
            "support": self.support,
            "nonnegativity": self.nonnegativity,
            "positivity": self.positivity,
        }

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())

    @property
    def passes(self) -> bool:
        return all(r <= self.tolerance for r in self.residuals.values())


def _rho(lam_v: float, x_e: float, nu: float, resetting: bool) -> float:
    return x_e / nu if resetting else max(lam_v, x_e / nu)


def check_thin_flow(
    inst: Instance, cfg: Configuration, tf: ThinFlow, tol: float | None = None
) -> ThinFlowReport:
    """Largest violation of each thin flow condition for ``tf`` under ``cfg``."""
    tol = inst.eta if tol is None else tol
    x, lam = np.asarray(tf.x, dtype=float), np.asarray(tf.lam, dtype=float)
    tails, heads, nus = inst.tails, inst.heads, inst.nus
    net_in = np.zeros(inst.n)
    np.add.at(net_in, heads, x)
    np.subtract.at(net_in, tails, x)
    demand = np.zeros(inst.n)
    demand[inst.s] = -inst.u0
    demand[inst.t] = inst.u0
    interior = [i for i in range(inst.n) if i not in (inst.s, inst.t)]
    conservation = float(np.max(np.abs(net_in[interior] - demand[interior]), initial=0.0))
    flow_value = max(abs(net_in[inst.t] - inst.u0), abs(net_in[inst.s] + inst.u0))

    active = np.array([a.id in cfg.active for a in inst.arcs])
    resetting = np.array([a.id in cfg.resetting for a in inst.arcs])
    support = float(np.max(np.abs(x[~active]), initial=0.0))
    nonneg = float(max(0.0, -np.min(x, initial=0.0)))
    positivity = float(max(0.0, -np.min(lam)))
    if np.min(lam) <= 0:
        positivity = max(positivity, 1.0)

    best = np.full(inst.n, math.inf)
    equality = 0.0
    for i in np.flatnonzero(active):
        v, w = tails[i], heads[i]
        rho = _rho(lam[v], x[i], nus[i], bool(resetting[i]))
        best[w] = min(best[w], rho)
        if x[i] > tol:
            equality = max(equality, abs(lam[w] - rho))
    min_cond = 0.0
    for w in range(inst.n):
        if w == inst.s:
            continue
        min_cond = max(min_cond, abs(lam[w] - best[w]) if math.isfinite(best[w]) else math.inf)
    return ThinFlowReport(
        conservation=conservation,
        flow_value=float(flow_value),
        source_label=abs(float(lam[inst.s]) - 1.0),
        min_condition=float(min_cond),
        flow_equality=float(equality),
        support=support,
        nonnegativity=nonneg,
        positivity=positivity,
        tolerance=tol,
    )


# -- solver ----------------------------------------------------------------------

_ZERO, _FREE, _TIGHT, _RESET = 0, 1, 2, 3


def _solve_statuses(
    inst: Instance, arcs: list[int], status: dict[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the linear system fixed by arc statuses.

    Unknowns are ``lam`` (source pinned to 1) and the flow on free arcs; flow
    on tight/resetting arcs is ``nu * lam_head``.
    """
    n = inst.n
    tails, heads, nus = inst.tails, inst.heads, inst.nus
    free = [i for i in arcs if status[i] == _FREE]
    col = {i: n + k for k, i in enumerate(free)}
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    size = n + len(free)

    row = np.zeros(size)
    row[inst.s] = 1.0
    rows.append(row)
    rhs.append(1.0)
    for i in free:
        row = np.zeros(size)
        row[heads[i]] += 1.0
        row[tails[i]] -= 1.0
        rows.append(row)
        rhs.append(0.0)
    balance = np.zeros((n, size))
    for i in arcs:
        if status[i] in (_TIGHT, _RESET):
            balance[heads[i], heads[i]] += nus[i]
            balance[tails[i], heads[i]] -= nus[i]
        elif status[i] == _FREE:
            balance[heads[i], col[i]] += 1.0
            balance[tails[i], col[i]] -= 1.0
    for v in range(n):
        if v == inst.s:
            continue
        rows.append(balance[v])
        rhs.append(inst.u0 if v == inst.t else 0.0)
    A = np.vstack(rows)
    sol, *_ = np.linalg.lstsq(A, np.array(rhs), rcond=None)
    lam = sol[:n].copy()
    x = np.zeros(inst.m)
    for i in arcs:
        if status[i] in (_TIGHT, _RESET):
            x[i] = nus[i] * lam[heads[i]]
        elif status[i] == _FREE:
            x[i] = sol[col[i]]
    return lam, x


def _route_given_labels(
    inst: Instance, arcs: list[int], status: dict[int, int], lam: np.ndarray
) -> np.ndarray | None:
    """Max-flow routing of ``u0`` within the bounds implied by ``lam`` and ``status``."""
    tails, heads, nus = inst.tails, inst.heads, inst.nus
    bounds = []
    for i in arcs:
        cap = nus[i] * lam[heads[i]]
        if status[i] in (_TIGHT, _RESET):
            bounds.append((tails[i], heads[i], cap, cap))
        elif status[i] == _FREE:
            bounds.append((tails[i], heads[i], 0.0, max(cap, 0.0)))
        else:
            bounds.append((tails[i], heads[i], 0.0, 0.0))
    supply = np.zeros(inst.n)
    supply[inst.s] = inst.u0
    supply[inst.t] = -inst.u0
    flows = feasible_flow(inst.n, bounds, supply)
    if flows is None:
        return None
    x = np.zeros(inst.m)
    x[arcs] = flows
    return x


def _statuses_from(
    inst: Instance, arcs: list[int], resetting: set[int], lam: np.ndarray,
    x: np.ndarray | None, previous: dict[int, int] | None, eta: float,
) -> dict[int, int]:
    tails, heads, nus = inst.tails, inst.heads, inst.nus
    status: dict[int, int] = {}
    for i in arcs:
        if i in resetting:
            status[i] = _RESET
            continue
        gap = lam[heads[i]] - lam[tails[i]]
        if previous is None or x is None:
            status[i] = _TIGHT if gap > eta else (_ZERO if gap < -eta else _FREE)
            continue
        # pivot only on violated conditions
        prev = previous[i]
        status[i] = prev
        if prev == _TIGHT and gap < -eta:
            status[i] = _FREE
        elif prev == _ZERO and gap > eta:
            status[i] = _FREE
        elif prev == _FREE:
            if x[i] > nus[i] * lam[heads[i]] + eta:
                status[i] = _TIGHT
            elif x[i] < -eta:
                status[i] = _ZERO
    # every non-source node needs an arc that can attain the minimum
    incoming: dict[int, list[int]] = {}
    for i in arcs:
        incoming.setdefault(heads[i], []).append(i)
    for w, ins in incoming.items():
        if w == inst.s:
            continue
        if all(status[i] == _ZERO for i in ins):
            pick = min(ins, key=lambda i: (lam[tails[i]], inst.arcs[i].id))
            status[pick] = _FREE
    return status


def solve_thin_flow(
    inst: Instance,
    cfg: Configuration,
    *,
    max_iterations: int | None = None,
    fallback: bool = True,
    check_valid: bool = True,
) -> ThinFlow:
    """Thin flow for a valid configuration.

    Starts from ``lam = kappa`` (source at 1) and alternates between fixing arc
    statuses from the current labels and solving the resulting linear system,
    routing flow by max-flow when the system leaves it underdetermined.  If no
    checker-passing point is reached within ``10 |V|`` rounds the oracle is used.
    """
    if check_valid:
        validity = is_valid_configuration(inst, cfg)
        if not validity:
            raise ThinFlowError(f"invalid configuration: {validity.witness}")
    eta = inst.eta
    arcs = sorted(inst.arc_index[a] for a in cfg.active)
    resetting = {inst.arc_index[a] for a in cfg.resetting}
    rounds = max_iterations if max_iterations is not None else 10 * inst.n

    lam = np.full(inst.n, inst.kappa)
    lam[inst.s] = 1.0
    status = _statuses_from(inst, arcs, resetting, lam, None, None, eta)
    seen: set[tuple[int, ...]] = set()
    best_residual = math.inf
    for it in range(1, rounds + 1):
        key = tuple(status[i] for i in arcs)
        if key in seen:
            break
        seen.add(key)
        lam, x = _solve_statuses(inst, arcs, status)
        tf = ThinFlow(x, lam, "iteration", it)
        report = check_thin_flow(inst, cfg, tf)
        if report.passes:
            return tf
        if np.all(lam > 0):
            routed = _route_given_labels(inst, arcs, status, lam)
            if routed is not None:
                tf = ThinFlow(routed, lam, "iteration", it)
                report = check_thin_flow(inst, cfg, tf)
                if report.passes:
                    return tf
        best_residual = min(best_residual, report.max_residual)
        status = _statuses_from(inst, arcs, resetting, lam, x, status, eta)
    if fallback:
        tf = thin_flow_oracle(inst, cfg, check_valid=False)
        return ThinFlow(tf.x, tf.lam, "oracle", tf.iterations)
    raise ThinFlowError(f"thin-flow iteration did not converge (best residual {best_residual:.3g})")


# -- oracle ------------------------------------------------------------------------


def _support_is_plausible(inst: Instance, support: Iterable[int]) -> bool:
    """Every support node other than s/t must both receive and emit flow."""
    has_in: set[int] = set()
    has_out: set[int] = set()
    tails, heads = inst.tails, inst.heads
    for i in support:
        has_out.add(int(tails[i]))
        has_in.add(int(heads[i]))
    if inst.s not in has_out or inst.t not in has_in:
        return False
    for v in has_in | has_out:
        if v != inst.s and v not in has_in:
            return False
        if v != inst.t and v not in has_out:
            return False
    return True


def _fill_unsupported_labels(
    inst: Instance, active: list[int], lam: np.ndarray, known: set[int]
) -> np.ndarray:
    """Labels of nodes without flow: ``lam_w = min`` over active in-arcs of ``lam_v``."""
    lam = lam.copy()
    tails, heads = inst.tails, inst.heads
    pending = set(range(inst.n)) - known
    settled = set(known)
    while pending:
        candidates = []
        for i in active:
            v, w = int(tails[i]), int(heads[i])
            if v in settled and w in pending:
                candidates.append((lam[v], w))
        if not candidates:
            break
        value, w = min(candidates)
        lam[w] = value
        settled.add(w)
        pending.discard(w)
    for w in pending:
        lam[w] = math.nan
    return lam


def enumerate_thin_flows(
    inst: Instance, cfg: Configuration, *, cap: int = 16
) -> Iterator[ThinFlow]:
    """Yield every checker-passing candidate found by support/case enumeration."""
    active = sorted(inst.arc_index[a] for a in cfg.active)
    if len(active) > cap:
        raise ThinFlowError(f"oracle cap exceeded: {len(active)} active arcs > {cap}")
    resetting = sorted(inst.arc_index[a] for a in cfg.resetting)
    optional = [i for i in active if i not in set(resetting)]
    tails, heads, nus = inst.tails, inst.heads, inst.nus
    n = inst.n
    count = 0
    for r in range(len(optional) + 1):
        for extra in itertools.combinations(optional, r):
            support = sorted(resetting + list(extra))
            if not _support_is_plausible(inst, support):
                continue
            nodes = sorted({int(tails[i]) for i in support} | {int(heads[i]) for i in support})
            for cases in itertools.product((0, 1), repeat=len(extra)):
                count += 1
                # unknowns: lam for every node, x for every support arc
                case = dict(zip(extra, cases))
                size = n + len(support)
                xcol = {i: n + k for k, i in enumerate(support)}
                A: list[np.ndarray] = []
                b: list[float] = []

                def eq(coeffs: dict[int, float], value: float) -> None:
                    row = np.zeros(size)
                    for c, coef in coeffs.items():
                        row[c] += coef
                    A.append(row)
                    b.append(value)

                eq({inst.s: 1.0}, 1.0)
                for i in support:
                    v, w = int(tails[i]), int(heads[i])
                    if i in case and case[i] == 1:
                        eq({w: 1.0, v: -1.0}, 0.0)  # lam_w = lam_v, queue not growing
                    else:
                        eq({xcol[i]: 1.0, w: -nus[i]}, 0.0)  # x_e = nu_e lam_w
                for v in nodes:
                    if v == inst.s:
                        continue
                    coeffs: dict[int, float] = {}
                    for i in support:
                        if int(heads[i]) == v:
                            coeffs[xcol[i]] = coeffs.get(xcol[i], 0.0) + 1.0
                        if int(tails[i]) == v:
                            coeffs[xcol[i]] = coeffs.get(xcol[i], 0.0) - 1.0
                    eq(coeffs, inst.u0 if v == inst.t else 0.0)
                M = np.vstack(A)
                sol, *_ = np.linalg.lstsq(M, np.array(b), rcond=None)
                if np.max(np.abs(M @ sol - np.array(b))) > 1e-9:
                    continue
                lam = np.full(n, math.nan)
                for v in nodes:
                    lam[v] = sol[v]
                lam = _fill_unsupported_labels(inst, active, lam, set(nodes))
                if not np.all(np.isfinite(lam)):
                    continue
                x = np.zeros(inst.m)
                for i in support:
                    x[i] = sol[xcol[i]]
                tf = ThinFlow(x, lam, "oracle", count)
                if check_thin_flow(inst, cfg, tf).passes:
                    yield tf
                    continue
                if np.linalg.matrix_rank(M) < size and np.all(lam > 0):
                    # underdetermined split across parallel free arcs
                    status = {}
                    for i in active:
                        if i not in support:
                            status[i] = _ZERO
                        elif i in case and case[i] == 1:
                            status[i] = _FREE
                        else:
                            status[i] = _TIGHT
                    routed = _route_given_labels(inst, active, status, lam)
                    if routed is not None:
                        tf = ThinFlow(routed, lam, "oracle", count)
                        if check_thin_flow(inst, cfg, tf).passes:
                            yield tf


def thin_flow_oracle(
    inst: Instance, cfg: Configuration, *, cap: int = 16, check_valid: bool = True
) -> ThinFlow:
    """Brute-force thin flow: first passing candidate of :func:`enumerate_thin_flows`."""
    if check_valid:
        validity = is_valid_configuration(inst, cfg)
        if not validity:
            raise ThinFlowError(f"invalid configuration: {validity.witness}")
    for tf in enumerate_thin_flows(inst, cfg, cap=cap):
        return tf
    raise ThinFlowError("no candidate satisfies the thin flow conditions")
