"""Network instances for the deterministic queueing model.

An instance is a directed graph whose arcs carry a free-flow transit time
``tau`` and a capacity ``nu``, together with a source, a sink and a constant
network inflow rate ``u0``.  Labels (points of R^V) are plain numpy arrays
indexed by the dense node order of the instance.
"""

from __future__ import annotations

import heapq
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

#: Shared geometric tolerance for hyperplane/phase classification.
ETA = 1e-9


class InstanceError(ValueError):
    """Raised for malformed instance documents; ``path`` names the offending field."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


@dataclass(frozen=True)
class Arc:
    id: str
    tail: str
    head: str
    tau: float
    nu: float


@dataclass(frozen=True)
class Instance:
    nodes: tuple[str, ...]
    arcs: tuple[Arc, ...]
    source: str
    sink: str
    u0: float
    eta: float = ETA
    node_index: Mapping[str, int] = field(init=False, repr=False, compare=False)
    arc_index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "node_index", {v: i for i, v in enumerate(self.nodes)})
        object.__setattr__(self, "arc_index", {a.id: i for i, a in enumerate(self.arcs)})

    # -- dense views -------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.arcs)

    @property
    def s(self) -> int:
        return self.node_index[self.source]

    @property
    def t(self) -> int:
        return self.node_index[self.sink]

    @property
    def tails(self) -> np.ndarray:
        return np.array([self.node_index[a.tail] for a in self.arcs], dtype=int)

    @property
    def heads(self) -> np.ndarray:
        return np.array([self.node_index[a.head] for a in self.arcs], dtype=int)

    @property
    def taus(self) -> np.ndarray:
        return np.array([a.tau for a in self.arcs], dtype=float)

    @property
    def nus(self) -> np.ndarray:
        return np.array([a.nu for a in self.arcs], dtype=float)

    @property
    def kappa(self) -> float:
        """Lipschitz bound ``max{1, u0 / min nu}`` of equilibrium trajectories."""
        return max(1.0, self.u0 / min(a.nu for a in self.arcs))

    @property
    def nu_sum(self) -> float:
        return sum(a.nu for a in self.arcs) + self.u0

    def arc(self, arc_id: str) -> Arc:
        return self.arcs[self.arc_index[arc_id]]

    def out_arcs(self, node: str) -> list[Arc]:
        return [a for a in self.arcs if a.tail == node]

    def in_arcs(self, node: str) -> list[Arc]:
        return [a for a in self.arcs if a.head == node]

    def labels(self, values: Mapping[str, float] | Sequence[float]) -> np.ndarray:
        """Build a label vector from a node->value mapping or a sequence in node order."""
        if isinstance(values, Mapping):
            missing = [v for v in self.nodes if v not in values]
            if missing:
                raise KeyError(f"labels missing for nodes {missing}")
            return np.array([float(values[v]) for v in self.nodes])
        arr = np.asarray(values, dtype=float)
        if arr.shape != (self.n,):
            raise ValueError(f"expected {self.n} label entries, got shape {arr.shape}")
        return arr.copy()

    def label_dict(self, l: np.ndarray) -> dict[str, float]:
        return {v: float(l[i]) for i, v in enumerate(self.nodes)}

    def with_eta(self, eta: float) -> Instance:
        return Instance(self.nodes, self.arcs, self.source, self.sink, self.u0, eta)


# -- serialization -----------------------------------------------------------


def _number(doc: Mapping[str, Any], key: str, path: str) -> float:
    if key not in doc:
        raise InstanceError(f"{path}.{key}", "missing field")
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceError(f"{path}.{key}", f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise InstanceError(f"{path}.{key}", "must be finite")
    return value


def _string(doc: Mapping[str, Any], key: str, path: str) -> str:
    if key not in doc:
        raise InstanceError(f"{path}.{key}", "missing field")
    value = doc[key]
    if not isinstance(value, str):
        raise InstanceError(f"{path}.{key}", f"expected a string, got {value!r}")
    return value


def parse_instance(document: Mapping[str, Any] | str | bytes, *, eta: float = ETA) -> Instance:
    """Parse an instance document (a mapping or JSON text)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise InstanceError("$", f"invalid JSON: {exc}") from exc
    if not isinstance(document, Mapping):
        raise InstanceError("$", "instance document must be a JSON object")

    raw_nodes = document.get("nodes")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise InstanceError("$.nodes", "expected a non-empty list of node names")
    nodes: list[str] = []
    for i, v in enumerate(raw_nodes):
        if not isinstance(v, str):
            raise InstanceError(f"$.nodes[{i}]", f"expected a string, got {v!r}")
        if v in nodes:
            raise InstanceError(f"$.nodes[{i}]", f"duplicate node {v!r}")
        nodes.append(v)
    known = set(nodes)

    raw_arcs = document.get("arcs")
    if not isinstance(raw_arcs, list) or not raw_arcs:
        raise InstanceError("$.arcs", "expected a non-empty list of arcs")
    arcs: list[Arc] = []
    seen: set[str] = set()
    for i, raw in enumerate(raw_arcs):
        path = f"$.arcs[{i}]"
        if not isinstance(raw, Mapping):
            raise InstanceError(path, "expected an object")
        arc_id = _string(raw, "id", path)
        if arc_id in seen:
            raise InstanceError(f"{path}.id", f"duplicate arc id {arc_id!r}")
        seen.add(arc_id)
        tail = _string(raw, "from", path)
        head = _string(raw, "to", path)
        for key, v in (("from", tail), ("to", head)):
            if v not in known:
                raise InstanceError(f"{path}.{key}", f"unknown node {v!r}")
        tau = _number(raw, "tau", path)
        nu = _number(raw, "nu", path)
        if tau <= 0:
            raise InstanceError(f"{path}.tau", "tau must be strictly positive")
        if nu <= 0:
            raise InstanceError(f"{path}.nu", "nu must be strictly positive")
        arcs.append(Arc(arc_id, tail, head, tau, nu))

    source = _string(document, "source", "$")
    sink = _string(document, "sink", "$")
    for key, v in (("source", source), ("sink", sink)):
        if v not in known:
            raise InstanceError(f"$.{key}", f"unknown node {v!r}")
    if source == sink:
        raise InstanceError("$.sink", "source and sink must differ")
    u0 = _number(document, "u0", "$")
    if u0 <= 0:
        raise InstanceError("$.u0", "u0 must be strictly positive")
    return Instance(tuple(nodes), tuple(arcs), source, sink, u0, eta)


def serialize_instance(inst: Instance) -> dict[str, Any]:
    return {
        "nodes": list(inst.nodes),
        "arcs": [
            {"id": a.id, "from": a.tail, "to": a.head, "tau": a.tau, "nu": a.nu} for a in inst.arcs
        ],
        "source": inst.source,
        "sink": inst.sink,
        "u0": inst.u0,
    }


def load_instance(path: str | Path) -> Instance:
    return parse_instance(Path(path).read_text(encoding="utf-8"))


# -- validation and geometry -------------------------------------------------


def _reachable(start: str, adjacency: Mapping[str, list[str]]) -> set[str]:
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for w in adjacency.get(v, ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def validate_instance(inst: Instance) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid)."""
    violations: list[str] = []
    ids = [a.id for a in inst.arcs]
    for arc_id in sorted({i for i in ids if ids.count(i) > 1}):
        violations.append(f"arc id {arc_id} is not unique")
    for a in inst.arcs:
        if not a.tau > 0:
            violations.append(f"arc {a.id} has non-positive tau {a.tau}")
        if not a.nu > 0:
            violations.append(f"arc {a.id} has non-positive nu {a.nu}")
    if not inst.u0 > 0:
        violations.append(f"inflow rate u0 {inst.u0} is not positive")
    if inst.source == inst.sink:
        violations.append("source equals sink")
    forward: dict[str, list[str]] = {}
    backward: dict[str, list[str]] = {}
    for a in inst.arcs:
        forward.setdefault(a.tail, []).append(a.head)
        backward.setdefault(a.head, []).append(a.tail)
    from_source = _reachable(inst.source, forward)
    to_sink = _reachable(inst.sink, backward)
    for v in inst.nodes:
        if v not in from_source:
            violations.append(f"{v} unreachable from source")
        elif v not in to_sink:
            violations.append(f"{v} cannot reach sink")
    return violations


def empty_network_labels(inst: Instance) -> np.ndarray:
    """Free-flow shortest-path distances from the source (queues all empty)."""
    dist = np.full(inst.n, math.inf)
    dist[inst.s] = 0.0
    heap = [(0.0, inst.s)]
    out: dict[int, list[tuple[int, float]]] = {}
    for a in inst.arcs:
        out.setdefault(inst.node_index[a.tail], []).append((inst.node_index[a.head], a.tau))
    while heap:
        d, v = heapq.heappop(heap)
        if d > dist[v]:
            continue
        for w, tau in out.get(v, ()):
            if d + tau < dist[w]:
                dist[w] = d + tau
                heapq.heappush(heap, (d + tau, w))
    if not np.all(np.isfinite(dist)):
        unreachable = [inst.nodes[i] for i in np.flatnonzero(~np.isfinite(dist))]
        raise ValueError(f"nodes unreachable from source: {unreachable}")
    return dist


def arc_slack(inst: Instance, l: np.ndarray, arc_id: str) -> float:
    """``l_w - l_v - tau_e``: positive means a queue, negative means inactive."""
    a = inst.arc(arc_id)
    return float(l[inst.node_index[a.head]] - l[inst.node_index[a.tail]] - a.tau)


def hyperplane_distance(inst: Instance, l: np.ndarray, arc_id: str) -> float:
    """Infinity-norm distance from ``l`` to the hyperplane ``l_w - l_v = tau_e``."""
    a = inst.arc(arc_id)
    if a.tail == a.head:
        return math.inf
    return abs(arc_slack(inst, l, arc_id)) / 2.0
