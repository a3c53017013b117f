"""Random instances and configurations for property tests and demos."""

from __future__ import annotations

import numpy as np

from .instance import Arc, Instance, validate_instance
from .thinflow import Configuration, classify_configuration, is_valid_configuration
from .trajectory import project_to_valid


def random_instance(
    rng: np.random.Generator,
    max_nodes: int = 6,
    max_arcs: int = 10,
    *,
    integer_params: bool = False,
) -> Instance:
    """A random valid instance (every node on some s-t walk)."""
    while True:
        n = int(rng.integers(2, max_nodes + 1))
        nodes = ["s"] + [f"v{i}" for i in range(1, n - 1)] + ["t"]
        m_target = int(rng.integers(max(n - 1, 1), max_arcs + 1))
        arcs: list[tuple[int, int]] = []
        # a spine s -> v1 -> ... -> t keeps every node usable
        order = list(range(1, n - 1))
        rng.shuffle(order)
        chain = [0] + order + [n - 1]
        arcs.extend(zip(chain[:-1], chain[1:]))
        while len(arcs) < m_target:
            v, w = (int(x) for x in rng.integers(0, n, size=2))
            if v == w or w == 0 or v == n - 1:
                continue
            arcs.append((v, w))
        built = []
        for k, (v, w) in enumerate(arcs):
            if integer_params:
                tau = float(rng.integers(1, 6))
                nu = float(rng.integers(1, 4))
            else:
                tau = float(np.round(rng.uniform(0.5, 4.0), 3))
                nu = float(np.round(rng.uniform(0.5, 3.0), 3))
            built.append(Arc(f"a{k}", nodes[v], nodes[w], tau, nu))
        u0 = float(rng.integers(1, 5)) if integer_params else float(np.round(rng.uniform(0.5, 4.0), 3))
        inst = Instance(tuple(nodes), tuple(built), "s", "t", u0)
        if not validate_instance(inst):
            return inst


def random_valid_configuration(
    rng: np.random.Generator, inst: Instance, tries: int = 50
) -> Configuration | None:
    """Classify a random label vector, projecting it onto the valid set when needed."""
    from .instance import empty_network_labels

    base = empty_network_labels(inst)
    for _ in range(tries):
        l = base + rng.uniform(0.0, 1.0, size=inst.n) * rng.choice([0.0, 1.0, 3.0])
        l[inst.s] = 0.0
        # snap some arcs exactly onto their hyperplane to create ties
        if rng.random() < 0.5:
            for i, a in enumerate(inst.arcs):
                v, w = inst.node_index[a.tail], inst.node_index[a.head]
                if w != inst.s and rng.random() < 0.3 and l[v] + a.tau >= base[w]:
                    l[w] = l[v] + a.tau
        try:
            l = project_to_valid(inst, l)
        except RuntimeError:
            continue
        cfg = classify_configuration(inst, l)
        if is_valid_configuration(inst, cfg):
            return cfg
    return None


def simple_paths(inst: Instance, cap: int = 10_000) -> list[tuple[str, ...]]:
    """All simple s-t paths as arc-id tuples, in lexicographic order of arc ids."""
    out_arcs: dict[str, list] = {}
    for a in sorted(inst.arcs, key=lambda a: a.id):
        out_arcs.setdefault(a.tail, []).append(a)
    paths: list[tuple[str, ...]] = []

    def walk(v: str, seen: set[str], acc: list[str]) -> None:
        if v == inst.sink:
            paths.append(tuple(acc))
            if len(paths) > cap:
                raise ValueError(f"more than {cap} simple paths")
            return
        for a in out_arcs.get(v, ()):
            if a.head not in seen:
                seen.add(a.head)
                acc.append(a.id)
                walk(a.head, seen, acc)
                acc.pop()
                seen.discard(a.head)

    walk(inst.source, {inst.source}, [])
    return sorted(paths)
