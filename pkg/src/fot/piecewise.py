"""Right-continuous piecewise-linear functions with jumps.

A function is given by sorted breakpoints ``xs`` with left limits ``left``
and values ``right`` at each breakpoint; between breakpoints it is linear
from ``right[i]`` to ``left[i+1]``.  Outside the breakpoint range it extends
linearly with ``head_slope`` / ``tail_slope``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PLFunction:
    xs: np.ndarray
    left: np.ndarray
    right: np.ndarray
    head_slope: float = 1.0
    tail_slope: float = 1.0

    def __post_init__(self) -> None:
        if len(self.xs) == 0:
            raise ValueError("a PLFunction needs at least one breakpoint")

    @classmethod
    def identity(cls, shift: float = 0.0) -> PLFunction:
        return cls(np.array([0.0]), np.array([shift]), np.array([shift]), 1.0, 1.0)

    @classmethod
    def from_points(cls, xs, left, right, head_slope: float = 1.0, tail_slope: float = 1.0) -> PLFunction:
        return cls(np.asarray(xs, float), np.asarray(left, float), np.asarray(right, float),
                   float(head_slope), float(tail_slope))

    # -- evaluation ------------------------------------------------------------
    def __call__(self, x, side: str = "right"):
        return self.evaluate(x, side)

    def evaluate(self, x, side: str = "right"):
        """Value at ``x``; ``side="left"`` gives left limits at breakpoints."""
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xs, lo, hi = self.xs, self.left, self.right
        out = np.empty_like(x)
        i = np.searchsorted(xs, x, side="right") - 1
        before = i < 0
        out[before] = lo[0] + self.head_slope * (x[before] - xs[0])
        after = i == len(xs) - 1
        out[after] = hi[-1] + self.tail_slope * (x[after] - xs[-1])
        mid = ~before & ~after
        if np.any(mid):
            j = i[mid]
            x0, x1 = xs[j], xs[j + 1]
            frac = (x[mid] - x0) / (x1 - x0)
            out[mid] = hi[j] + frac * (lo[j + 1] - hi[j])
        if side == "left":
            k = np.searchsorted(xs, x, side="left")
            hit = (k < len(xs)) & (xs[np.minimum(k, len(xs) - 1)] == x)
            out[hit] = lo[k[hit]]
        elif side != "right":
            raise ValueError(f"side must be 'left' or 'right', not {side!r}")
        return float(out[0]) if scalar else out

    def slopes(self) -> np.ndarray:
        """Slope on each open segment between consecutive breakpoints."""
        if len(self.xs) < 2:
            return np.empty(0)
        return (self.left[1:] - self.right[:-1]) / np.diff(self.xs)

    def slope_before(self, x: np.ndarray) -> np.ndarray:
        """Slope just left of each point ``x`` (points may be breakpoints)."""
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(self.xs, x, side="left") - 1
        seg = self.slopes()
        out = np.empty_like(x)
        out[k < 0] = self.head_slope
        inner = k >= 0
        kk = k[inner]
        vals = np.where(kk >= len(self.xs) - 1, self.tail_slope, 0.0)
        ok = kk < len(self.xs) - 1
        vals[ok] = seg[kk[ok]]
        out[inner] = vals
        return out

    def is_nondecreasing(self, tol: float = 1e-12) -> bool:
        return bool(
            self.head_slope >= -tol
            and self.tail_slope >= -tol
            and np.all(self.right >= self.left - tol)
            and np.all(self.slopes() >= -tol)
        )

    def first_reach(self, y: float) -> float:
        """``inf{x : f(x) >= y}`` for a nondecreasing function."""
        xs, lo, hi = self.xs, self.left, self.right
        if lo[0] >= y:
            if self.head_slope <= 0:
                return -np.inf
            return float(xs[0] - (lo[0] - y) / self.head_slope)
        for i in range(len(xs)):
            if lo[i] >= y:
                x0, v0 = xs[i - 1], hi[i - 1]
                return float(x0 + (y - v0) / (lo[i] - v0) * (xs[i] - x0))
            if hi[i] >= y:
                return float(xs[i])
        if self.tail_slope <= 0:
            return np.inf
        return float(xs[-1] + (y - hi[-1]) / self.tail_slope)

    # -- algebra ------------------------------------------------------------------
    def compose(self, inner: PLFunction) -> PLFunction:
        """``self ∘ inner`` for nondecreasing right-continuous ``inner`` and ``self``."""
        g = inner
        pts = [g.xs]
        ys = self.xs
        # preimages of outer breakpoints on strictly increasing pieces of g
        if g.head_slope > 0:
            sel = ys[ys < g.left[0]]
            pts.append(g.xs[0] + (sel - g.left[0]) / g.head_slope)
        if g.tail_slope > 0:
            sel = ys[ys > g.right[-1]]
            pts.append(g.xs[-1] + (sel - g.right[-1]) / g.tail_slope)
        if len(g.xs) > 1:
            a, b = g.right[:-1], g.left[1:]
            inc = b > a
            for k in np.flatnonzero(inc):
                lo_i = np.searchsorted(ys, a[k], side="right")
                hi_i = np.searchsorted(ys, b[k], side="left")
                if hi_i > lo_i:
                    sel = ys[lo_i:hi_i]
                    pts.append(g.xs[k] + (sel - a[k]) / (b[k] - a[k]) * (g.xs[k + 1] - g.xs[k]))
        X = np.unique(np.concatenate(pts))
        gr = self._snap(g.evaluate(X, "right"))
        gl = self._snap(g.evaluate(X, "left"))
        right = self.evaluate(gr, "right")
        rising = g.slope_before(X) > 0
        left = np.where(rising, self.evaluate(gl, "left"), self.evaluate(gl, "right"))
        head = g.head_slope * self.head_slope if g.head_slope > 0 else 0.0
        tail = g.tail_slope * self.tail_slope if g.tail_slope > 0 else 0.0
        return PLFunction(X, left, right, head, tail).simplify()

    def _snap(self, y: np.ndarray, rel: float = 1e-12) -> np.ndarray:
        """Move values within rounding distance of a breakpoint onto it (preimages are inexact)."""
        xs = self.xs
        k = np.clip(np.searchsorted(xs, y), 1, len(xs) - 1) if len(xs) > 1 else np.zeros(len(y), int)
        out = y.copy()
        for cand in (xs[k - 1] if len(xs) > 1 else xs[k], xs[k]):
            close = np.abs(y - cand) <= rel * (1.0 + np.abs(cand))
            out[close] = cand[close]
        return out

    def minimum(self, other: PLFunction) -> PLFunction:
        f, g = self, other
        X = np.unique(np.concatenate([f.xs, g.xs]))
        extra = []
        # crossings on the head ray, interior segments and tail ray
        d0 = f.evaluate(X[0], "left") - g.evaluate(X[0], "left")
        ds = f.head_slope - g.head_slope
        if ds != 0 and d0 * ds > 0:
            extra.append(X[0] - d0 / ds)
        if len(X) > 1:
            fa, ga = f.evaluate(X[:-1], "right"), g.evaluate(X[:-1], "right")
            fb, gb = f.evaluate(X[1:], "left"), g.evaluate(X[1:], "left")
            da, db = fa - ga, fb - gb
            cross = da * db < 0
            if np.any(cross):
                t = da[cross] / (da[cross] - db[cross])
                extra.extend(X[:-1][cross] + t * (X[1:][cross] - X[:-1][cross]))
        d1 = f.evaluate(X[-1], "right") - g.evaluate(X[-1], "right")
        ds = f.tail_slope - g.tail_slope
        if ds != 0 and d1 * ds < 0:
            extra.append(X[-1] - d1 / ds)
        if extra:
            X = np.unique(np.concatenate([X, np.asarray(extra, float)]))
        left = np.minimum(f.evaluate(X, "left"), g.evaluate(X, "left"))
        right = np.minimum(f.evaluate(X, "right"), g.evaluate(X, "right"))
        fl = f.evaluate(X[0] - 1.0)
        gl = g.evaluate(X[0] - 1.0)
        head = f.head_slope if fl < gl or (fl == gl and f.head_slope > g.head_slope) else g.head_slope
        fr = f.evaluate(X[-1] + 1.0)
        gr = g.evaluate(X[-1] + 1.0)
        tail = f.tail_slope if fr < gr or (fr == gr and f.tail_slope < g.tail_slope) else g.tail_slope
        return PLFunction(X, left, right, head, tail).simplify()

    def simplify(self, tol: float = 1e-12) -> PLFunction:
        """Drop breakpoints where the function is continuous with unchanged slope."""
        xs, lo, hi = self.xs, self.left, self.right
        if len(xs) <= 2:
            return self
        keep = np.ones(len(xs), dtype=bool)
        seg = self.slopes()
        before = np.concatenate([[self.head_slope], seg])
        after = np.concatenate([seg, [self.tail_slope]])
        scale = 1.0 + np.abs(hi)
        smooth = (np.abs(hi - lo) <= tol * scale) & (np.abs(before - after) <= 1e-9)
        keep[1:-1] = ~smooth[1:-1]
        if keep.all():
            return self
        return PLFunction(xs[keep], lo[keep], hi[keep], self.head_slope, self.tail_slope)

    def shifted(self, dy: float) -> PLFunction:
        return PLFunction(self.xs, self.left + dy, self.right + dy, self.head_slope, self.tail_slope)
