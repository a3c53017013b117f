"""Convergence experiments: packet equilibria for shrinking packet sizes
measured against the exact equilibrium trajectory."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .instance import Instance, empty_network_labels, load_instance
from .loading import Outcome, load_profile, measure_epsilon, measure_strict_delta
from .packets import (
    PacketInstance,
    br_residual,
    default_packet_count,
    embed_packets,
    find_packet_equilibrium,
)
from .trajectory import Trajectory, compute_trajectory, evaluate_trajectory

CSV_HEADER = ("beta", "epsilon", "strict_delta", "sup_distance", "status", "wall_ms")


class SweepError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    betas: tuple[float, ...]
    instance_path: str | None = None
    instance: Instance | None = None
    horizon: float = 10.0
    grid_step: float = 0.01
    out_csv: str | None = None
    summary_json: str | None = None
    plot_data: str | None = None
    max_rounds: int = 20
    certify_packets: int = 50
    lead_packet: bool = True
    eta: float | None = None
    record_wall_time: bool = True  # False writes 0.0 so repeated runs give identical bytes

    def __post_init__(self) -> None:
        betas = tuple(float(b) for b in self.betas)
        object.__setattr__(self, "betas", betas)
        if not betas:
            raise SweepError("betas must be non-empty")
        if any(not b > 0 for b in betas):
            raise SweepError("betas must be strictly positive")
        if any(b1 <= b2 for b1, b2 in zip(betas, betas[1:])):
            raise SweepError("betas must be strictly decreasing")
        if not self.grid_step > 0:
            raise SweepError("grid step must be positive")
        if not self.horizon > 0:
            raise SweepError("horizon must be positive")
        if self.instance is None and self.instance_path is None:
            raise SweepError("need an instance or an instance path")

    def load(self) -> Instance:
        inst = self.instance if self.instance is not None else load_instance(self.instance_path)
        return inst.with_eta(self.eta) if self.eta is not None else inst


@dataclass(frozen=True)
class SweepRow:
    beta: float
    epsilon: float
    strict_delta: float
    sup_distance: float
    status: str
    wall_ms: float
    packet_count: int = 0
    rounds: int = 0
    br_residual: float = math.nan
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    def csv_fields(self) -> tuple[str, ...]:
        return (
            repr(self.beta),
            repr(self.epsilon),
            repr(self.strict_delta),
            repr(self.sup_distance),
            self.status,
            f"{self.wall_ms:.1f}",
        )


def theta_grid(horizon: float, step: float, start: float = 0.0) -> np.ndarray:
    n = int(round((horizon - start) / step))
    return start + step * np.arange(n + 1)


def sup_distance(traj: Trajectory, out: Outcome, grid: Sequence[float]) -> float:
    """``max_theta |l(theta) - l*(theta)|_inf`` over the grid."""
    grid = np.asarray(grid, dtype=float)
    top = float(np.max(grid))
    if top > out.horizon + out.inst.eta:
        raise SweepError(f"horizon mismatch: grid reaches {top} but the outcome covers {out.horizon}")
    if top > traj.theta_end + out.inst.eta:
        raise SweepError(f"horizon mismatch: grid reaches {top} but the trajectory ends at {traj.theta_end}")
    measured = np.vstack([f.evaluate(grid) for f in out.label_functions])
    exact = np.column_stack([evaluate_trajectory(traj, th) for th in grid])
    return float(np.max(np.abs(measured - exact)))


def _row_for_beta(cfg: SweepConfig, inst: Instance, traj: Trajectory, beta: float, grid: np.ndarray):
    t0 = time.perf_counter()
    count = default_packet_count(inst, beta, cfg.horizon)
    pinst = PacketInstance(inst, beta, count, cfg.lead_packet)
    prof, status = find_packet_equilibrium(pinst, cfg.max_rounds)
    residual = br_residual(pinst, prof, [k for k in pinst.indices][: cfg.certify_packets])
    out = load_profile(inst, embed_packets(pinst, prof))
    eps = measure_epsilon(inst, out, cfg.horizon)
    delta = measure_strict_delta(inst, out, cfg.horizon)
    dist = sup_distance(traj, out, grid)
    label = "converged" if status.converged else "packet_eq_not_converged"
    wall = 1000.0 * (time.perf_counter() - t0) if cfg.record_wall_time else 0.0
    # grid error bound: approximate-Lipschitz constant times the grid step
    gap = 3.0 * inst.kappa * inst.n * inst.nu_sum * cfg.grid_step
    row = SweepRow(beta, eps, delta, dist, label, wall, count, status.rounds, residual,
                   {"max_improvement": status.max_improvement, "grid_gap": gap})
    return row, out


def run_convergence_sweep(cfg: SweepConfig) -> list[SweepRow]:
    """One row per packet size; stage failures are recorded and the sweep continues."""
    inst = cfg.load()
    traj = compute_trajectory(inst, start=empty_network_labels(inst),
                              horizon=max(cfg.horizon * 2, cfg.horizon + 1))
    grid = theta_grid(cfg.horizon, cfg.grid_step)
    rows: list[SweepRow] = []
    last_out: Outcome | None = None
    for beta in cfg.betas:
        t0 = time.perf_counter()
        try:
            row, last_out = _row_for_beta(cfg, inst, traj, beta, grid)
        except Exception as exc:  # keep sweeping; the row carries the failure
            wall = 1000.0 * (time.perf_counter() - t0) if cfg.record_wall_time else 0.0
            row = SweepRow(beta, math.nan, math.nan, math.nan, f"error: {type(exc).__name__}: {exc}", wall)
            last_out = None
        rows.append(row)
    rows.sort(key=lambda r: -r.beta)
    if cfg.out_csv or cfg.summary_json:
        export_report(rows, cfg.out_csv, cfg.summary_json)
    if cfg.plot_data and last_out is not None:
        write_plot_data(cfg.plot_data, traj, last_out, grid)
    return rows


def write_plot_data(path: str | Path, traj: Trajectory, out: Outcome, grid: np.ndarray) -> None:
    inst = out.inst
    measured = np.vstack([f.evaluate(grid) for f in out.label_functions])
    exact = np.column_stack([evaluate_trajectory(traj, th) for th in grid])
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("theta", "node", "measured", "exact"))
            for j, th in enumerate(grid):
                for v, name in enumerate(inst.nodes):
                    w.writerow((repr(float(th)), name, repr(float(measured[v, j])), repr(float(exact[v, j]))))
    except OSError as exc:
        raise OSError(f"{path}: {exc}") from exc


def fit_slope(rows: Sequence[SweepRow]) -> float | None:
    """Least-squares slope of log(sup_distance) against log(beta)."""
    pts = [(r.beta, r.sup_distance) for r in rows if r.sup_distance > 0 and math.isfinite(r.sup_distance)]
    if len(pts) < 2:
        return None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def self_check(rows: Sequence[SweepRow]) -> list[str]:
    """Trend and scaling checks over a finished sweep (empty list means all pass)."""
    problems = []
    ok = [r for r in rows if math.isfinite(r.sup_distance)]
    for r in ok:
        if r.epsilon > r.strict_delta + 1e-9:
            problems.append(f"beta={r.beta}: epsilon exceeds strict delta")
    if len(ok) >= 2:
        big, small = max(ok, key=lambda r: r.beta), min(ok, key=lambda r: r.beta)
        if not small.sup_distance < big.sup_distance:
            problems.append("sup_distance does not shrink from the largest to the smallest beta")
        ratios = [r.strict_delta / r.beta for r in ok]
        if min(ratios) <= 0 or max(ratios) / min(ratios) > 4:
            problems.append(f"strict delta / beta outside a factor-4 band: {ratios}")
    return problems


def rows_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def export_report(rows: Sequence[SweepRow], csv_path: str | Path | None, json_path: str | Path | None = None) -> dict[str, Any]:
    """Write the sweep CSV and a JSON summary with the fitted log-log slope."""
    if not rows:
        raise SweepError("no rows to export")
    slope = fit_slope(rows)
    summary = {
        "rows": [
            {k: v for k, v in asdict(r).items() if k != "extra"} | dict(r.extra)
            for r in rows
        ],
        "loglog_slope": slope if slope is not None else "not-available",
        "self_check": self_check(rows),
    }
    for path, text in ((csv_path, rows_to_csv(rows)), (json_path, json.dumps(summary, indent=2, default=str))):
        if path is None:
            continue
        try:
            Path(path).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(f"{path}: {exc}") from exc
    return summary
