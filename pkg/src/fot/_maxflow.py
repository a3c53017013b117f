"""Small float-tolerant max-flow routines used by the thin-flow code.

Graphs here have at most a few dozen arcs, so a plain Edmonds-Karp with an
explicit tolerance is both fast enough and predictable under rounding.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Sequence

import numpy as np


class _Residual:
    def __init__(self, n: int) -> None:
        self.n = n
        self.head: list[int] = []
        self.cap: list[float] = []
        self.adj: list[list[int]] = [[] for _ in range(n)]

    def add(self, u: int, v: int, cap: float) -> int:
        k = len(self.head)
        self.head += [v, u]
        self.cap += [cap, 0.0]
        self.adj[u].append(k)
        self.adj[v].append(k + 1)
        return k

    def max_flow(self, s: int, t: int, tol: float) -> float:
        total = 0.0
        while True:
            parent = [-1] * self.n
            parent[s] = -2
            queue = deque([s])
            while queue and parent[t] == -1:
                u = queue.popleft()
                for k in self.adj[u]:
                    v = self.head[k]
                    if parent[v] == -1 and self.cap[k] > tol:
                        parent[v] = k
                        queue.append(v)
            if parent[t] == -1:
                return total
            push = np.inf
            v = t
            while v != s:
                k = parent[v]
                push = min(push, self.cap[k])
                v = self.head[k ^ 1]
            v = t
            while v != s:
                k = parent[v]
                self.cap[k] -= push
                self.cap[k ^ 1] += push
                v = self.head[k ^ 1]
            total += push


def feasible_flow(
    n: int,
    arcs: Sequence[tuple[int, int, float, float]],
    supply: Sequence[float],
    tol: float = 1e-12,
) -> np.ndarray | None:
    """Find ``x`` with ``lo <= x <= hi`` and net outflow ``supply[v]`` at every node.

    ``arcs`` holds ``(tail, head, lo, hi)``.  Returns ``None`` when infeasible
    (beyond ``tol`` scaled by the total demand).
    """
    lo = np.array([a[2] for a in arcs], dtype=float)
    hi = np.array([a[3] for a in arcs], dtype=float)
    if np.any(hi < lo - tol):
        return None
    excess = np.array(supply, dtype=float).copy()
    for u, v, low, _ in arcs:
        excess[u] -= low
        excess[v] += low
    g = _Residual(n + 2)
    src, dst = n, n + 1
    ids = [g.add(u, v, max(h - low, 0.0)) for (u, v, low, h) in arcs]
    need = 0.0
    for v in range(n):
        if excess[v] > 0:
            g.add(src, v, excess[v])
            need += excess[v]
        elif excess[v] < 0:
            g.add(v, dst, -excess[v])
    pushed = g.max_flow(src, dst, tol)
    if pushed < need - max(tol, 1e-10 * max(need, 1.0)):
        return None
    x = lo.copy()
    for i, k in enumerate(ids):
        x[i] += g.cap[k ^ 1]
    return x
