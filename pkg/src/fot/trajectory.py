"""Piecewise-linear equilibrium trajectories.

Starting from a label vector, the trajectory moves along the thin-flow
direction of the current configuration until some arc crosses its hyperplane
``l_w - l_v = tau_e``; there the configuration is re-classified and a new
phase begins.  A final phase that never meets another hyperplane is the
steady state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .instance import Instance
from .thinflow import (
    Configuration,
    GeneralizedSubnetwork,
    ThinFlow,
    check_thin_flow,
    classify_configuration,
    is_valid_configuration,
    solve_thin_flow,
)


class TrajectoryError(RuntimeError):
    pass


@dataclass(frozen=True)
class Phase:
    theta_start: float
    theta_end: float
    label_start: np.ndarray
    direction: np.ndarray
    config: Configuration
    flow: ThinFlow
    # arcs whose boundary status was decided by the sign of the direction
    resolved: tuple[str, ...] = ()

    def label_at(self, theta: float) -> np.ndarray:
        return self.label_start + (theta - self.theta_start) * self.direction

    @property
    def label_end(self) -> np.ndarray:
        if math.isinf(self.theta_end):
            raise ValueError("final phase has no end label")
        return self.label_at(self.theta_end)


@dataclass(frozen=True)
class Trajectory:
    inst: Instance
    sub: GeneralizedSubnetwork
    phases: tuple[Phase, ...]
    horizon: float
    notes: tuple[str, ...] = field(default=())

    @property
    def steady(self) -> bool:
        return math.isinf(self.phases[-1].theta_end)

    @property
    def theta_end(self) -> float:
        return self.phases[-1].theta_end

    def breakpoints(self) -> list[float]:
        return [p.theta_start for p in self.phases[1:]]

    def to_json(self) -> dict[str, Any]:
        inst = self.inst
        return {
            "phases": [
                {
                    "theta_start": p.theta_start,
                    "theta_end": p.theta_end if math.isfinite(p.theta_end) else "inf",
                    "label_start": inst.label_dict(p.label_start),
                    "direction": inst.label_dict(p.direction),
                    "active": sorted(p.config.active),
                    "resetting": sorted(p.config.resetting),
                }
                for p in self.phases
            ]
        }


def default_horizon(inst: Instance) -> float:
    return 4.0 * float(np.sum(inst.taus)) * inst.kappa


def _slacks(inst: Instance, l: np.ndarray) -> np.ndarray:
    return l[inst.heads] - l[inst.tails] - inst.taus


def _interior_config(
    inst: Instance, cfg: Configuration, sub: GeneralizedSubnetwork, l: np.ndarray,
    lam: np.ndarray, boundary: set[str],
) -> tuple[Configuration, tuple[str, ...]]:
    """Configuration just after ``l`` when moving along ``lam``."""
    eta = inst.eta
    slack = _slacks(inst, l)
    active = set(cfg.active)
    resetting = set(cfg.resetting)
    resolved = []
    for i, a in enumerate(inst.arcs):
        if a.id not in sub.free:
            continue
        on_plane = abs(slack[i]) <= eta or a.id in boundary
        if not on_plane:
            continue
        rate = lam[inst.node_index[a.head]] - lam[inst.node_index[a.tail]]
        if rate > eta:
            active.add(a.id)
            resetting.add(a.id)
            resolved.append(a.id)
        elif rate < -eta:
            active.discard(a.id)
            resetting.discard(a.id)
            resolved.append(a.id)
    return Configuration(frozenset(active), frozenset(resetting)), tuple(sorted(resolved))


def _classify(
    inst: Instance, l: np.ndarray, sub: GeneralizedSubnetwork, boundary: set[str]
) -> Configuration:
    cfg = classify_configuration(inst, l, sub)
    if not boundary:
        return cfg
    # arcs that hit their hyperplane in a merged event count as exactly on it
    active = set(cfg.active) | (boundary & sub.allowed)
    resetting = set(cfg.resetting) - (boundary - sub.forced_queue)
    return Configuration(frozenset(active), frozenset(resetting))


def compute_trajectory(
    inst: Instance,
    sub: GeneralizedSubnetwork | None = None,
    start: np.ndarray | None = None,
    horizon: float | None = None,
    *,
    max_phases: int | None = None,
) -> Trajectory:
    """Follow the thin-flow vector field from ``start`` up to ``horizon``."""
    from .instance import empty_network_labels

    sub = sub or GeneralizedSubnetwork.full(inst)
    l = empty_network_labels(inst) if start is None else np.asarray(start, dtype=float).copy()
    horizon = default_horizon(inst) if horizon is None else float(horizon)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    max_phases = max_phases if max_phases is not None else 10 * 2 ** min(inst.m, 20)
    eta = inst.eta

    theta = 0.0
    phases: list[Phase] = []
    notes: list[str] = []
    boundary: set[str] = set()
    free_idx = [i for i, a in enumerate(inst.arcs) if a.id in sub.free]
    while True:
        if len(phases) >= max_phases:
            raise TrajectoryError(f"phase-count cap {max_phases} exceeded")
        cfg = _classify(inst, l, sub, boundary)
        validity = is_valid_configuration(inst, cfg)
        if not validity:
            where = "start" if not phases else f"theta={theta:g}"
            raise TrajectoryError(f"invalid configuration at {where}: {validity.witness}")
        tf = solve_thin_flow(inst, cfg, check_valid=False)
        lam = tf.lam
        interior, resolved = _interior_config(inst, cfg, sub, l, lam, boundary)
        if interior != cfg:
            if not check_thin_flow(inst, interior, tf).passes:
                tf = solve_thin_flow(inst, interior)
                if np.max(np.abs(tf.lam - lam)) > 1e-7:
                    notes.append(f"theta={theta:g}: direction changed after boundary resolution")
                lam = tf.lam
            if len(resolved) > 1:
                notes.append(f"theta={theta:g}: joint boundary resolution of {list(resolved)}")

        slack = _slacks(inst, l)
        rate = lam[inst.heads] - lam[inst.tails]
        hits: list[tuple[float, str]] = []
        for i in free_idx:
            a = inst.arcs[i]
            if a.id in interior.resetting and rate[i] < -eta and slack[i] > -eta:
                hits.append((max(slack[i], 0.0) / -rate[i], a.id))
            elif a.id not in interior.active and rate[i] > eta and slack[i] < eta:
                hits.append((max(-slack[i], 0.0) / rate[i], a.id))
        hits = [(t, e) for t, e in hits if t > eta]
        if not hits:
            phases.append(Phase(theta, math.inf, l.copy(), lam.copy(), interior, tf, resolved))
            break
        step = min(t for t, _ in hits)
        if theta + step >= horizon - eta:
            phases.append(Phase(theta, horizon, l.copy(), lam.copy(), interior, tf, resolved))
            break
        phases.append(Phase(theta, theta + step, l.copy(), lam.copy(), interior, tf, resolved))
        boundary = {e for t, e in hits if t <= step + eta}
        l = l + step * lam
        theta = theta + step
    return Trajectory(inst, sub, tuple(phases), horizon, tuple(notes))


def evaluate_trajectory(traj: Trajectory, theta: float) -> np.ndarray:
    first = traj.phases[0]
    if theta < first.theta_start - traj.inst.eta:
        raise ValueError(f"theta {theta} precedes the trajectory start")
    last = traj.phases[-1]
    if theta > last.theta_end + traj.inst.eta:
        raise ValueError(f"theta {theta} beyond computed horizon {last.theta_end}")
    for p in traj.phases:
        if theta < p.theta_end:
            return p.label_at(theta)
    return last.label_at(theta)


@dataclass(frozen=True)
class SteadyStateInfo:
    reached: bool
    T_ss: float | None
    lambda_ss: np.ndarray | None
    conditions_ok: bool | None = None
    violations: tuple[str, ...] = ()


def steady_state_info(traj: Trajectory) -> SteadyStateInfo:
    """Steady-state summary, with the arc-classification check at ``T_ss``."""
    if not traj.steady:
        return SteadyStateInfo(False, None, None)
    inst = traj.inst
    last = traj.phases[-1]
    lam = last.direction
    eta = inst.eta
    violations = []
    for i, a in enumerate(inst.arcs):
        if a.id not in traj.sub.allowed:
            continue
        v, w = inst.node_index[a.tail], inst.node_index[a.head]
        if lam[w] > lam[v] + eta and a.id not in last.config.active:
            violations.append(f"{a.id}: lambda increases along arc but arc inactive")
        if lam[w] < lam[v] - eta and a.id in last.config.resetting:
            violations.append(f"{a.id}: lambda decreases along arc but arc has a queue")
    return SteadyStateInfo(True, last.theta_start, lam.copy(), not violations, tuple(violations))


# -- exact strategy profile ---------------------------------------------------------


def decompose_paths(inst: Instance, x: np.ndarray, tol: float | None = None) -> list[tuple[tuple[str, ...], float]]:
    """Split an acyclic s-t flow into path flows, choosing paths lexicographically by arc id."""
    tol = inst.eta if tol is None else tol
    rest = np.array(x, dtype=float)
    order = sorted(range(inst.m), key=lambda i: inst.arcs[i].id)
    tails, heads = inst.tails, inst.heads
    out: list[tuple[tuple[str, ...], float]] = []
    for _ in range(inst.m + 1):
        if np.sum(np.clip(rest, 0, None)[[i for i in range(inst.m) if tails[i] == inst.s]]) <= tol:
            break
        # lexicographically smallest path inside the remaining support
        path: list[int] = []
        v = inst.s
        seen = {v}
        while v != inst.t:
            nxt = [i for i in order if tails[i] == v and rest[i] > tol and heads[i] not in seen]
            if not nxt:
                break
            i = nxt[0]
            path.append(i)
            v = int(heads[i])
            seen.add(v)
        if v != inst.t:
            break
        amount = min(rest[i] for i in path)
        for i in path:
            rest[i] -= amount
        out.append((tuple(inst.arcs[i].id for i in path), float(amount)))
    if np.max(np.abs(rest), initial=0.0) > max(tol, 1e-9):
        raise TrajectoryError(f"path decomposition residual {np.max(np.abs(rest)):.3g}")
    return out


def derive_exact_profile(traj: Trajectory, until: float | None = None) -> list:
    """Constant-rate, zero-waiting path classes reproducing the trajectory."""
    from .loading import StrategyClass

    end_all = traj.horizon if until is None else until
    classes = []
    for p in traj.phases:
        end = min(p.theta_end, end_all)
        if end <= p.theta_start:
            continue
        for path, rate in decompose_paths(traj.inst, p.flow.x):
            if rate <= traj.inst.eta:
                continue
            classes.append(StrategyClass.interval(path, p.theta_start, end, rate))
    return classes


# -- projection onto the valid set ------------------------------------------------------


def project_to_valid(inst: Instance, l: np.ndarray, *, max_steps: int | None = None) -> np.ndarray:
    """Lower labels behind dead-end queues until the configuration becomes valid.

    When every node starts reachable from the source along active arcs (as for
    any earliest-arrival label) the procedure keeps that property; otherwise it
    may end invalid, which is reported as an error.
    """
    l = np.asarray(l, dtype=float).copy()
    eta = inst.eta
    tails, heads, taus = inst.tails, inst.heads, inst.taus
    max_steps = max_steps if max_steps is not None else max(inst.n * inst.m, 1)
    for _ in range(max_steps + 1):
        slack = l[heads] - l[tails] - taus
        active = slack >= -eta
        resetting = slack > eta
        # nodes with an active path to t
        to_t = {inst.t}
        changed = True
        while changed:
            changed = False
            for i in np.flatnonzero(active):
                if heads[i] in to_t and tails[i] not in to_t:
                    to_t.add(int(tails[i]))
                    changed = True
        blocked = {int(heads[i]) for i in np.flatnonzero(resetting) if heads[i] not in to_t}
        blocked.discard(inst.s)
        if not blocked:
            validity = is_valid_configuration(inst, classify_configuration(inst, l))
            if not validity:
                raise TrajectoryError(f"projection ended invalid: {validity.witness}")
            return l
        region = set(blocked)
        stack = list(blocked)
        while stack:
            v = stack.pop()
            for i in np.flatnonzero(active & (tails == v)):
                w = int(heads[i])
                if w not in region:
                    region.add(w)
                    stack.append(w)
        region.discard(inst.s)
        step = math.inf
        for i in range(inst.m):
            v, w = int(tails[i]), int(heads[i])
            if v in region and w not in region and not active[i]:
                step = min(step, -slack[i])
        for w in blocked:
            inside = any(int(tails[i]) in region and active[i] for i in range(inst.m) if heads[i] == w)
            if inside:
                continue
            outside = [slack[i] for i in range(inst.m) if heads[i] == w and active[i]]
            if outside:
                step = min(step, max(outside))
        if not math.isfinite(step) or step <= 0:
            raise TrajectoryError("projection made no progress")
        for v in region:
            l[v] -= step
    raise TrajectoryError(f"projection did not terminate within {max_steps} steps")
