"""Command line entry point: ``fot nash | thinflow | packets | verify | converge``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from .harness import SweepConfig, run_convergence_sweep, rows_to_csv
from .instance import InstanceError, empty_network_labels, load_instance, parse_instance
from .loading import (
    StrategyClass,
    load_profile,
    measure_epsilon,
    measure_strict_delta,
    outcome_residuals,
)
from .packets import (
    PacketInstance,
    PacketProfile,
    embed_packets,
    find_packet_equilibrium,
    simulate_packets,
)
from .thinflow import Configuration, check_thin_flow, is_valid_configuration, solve_thin_flow
from .trajectory import compute_trajectory
from .generators import simple_paths


class CLIError(Exception):
    pass


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CLIError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}: invalid JSON ({exc})") from exc


def _emit(doc: Any, out: str | None) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CLIError(f"{out}: {exc.strerror or exc}") from exc


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise CLIError(f"{path}: {exc.strerror or exc}") from exc


def _instance(args) -> Any:
    inst = load_instance(args.instance)
    return inst.with_eta(args.eta) if getattr(args, "eta", None) is not None else inst


# -- subcommands --------------------------------------------------------------------


def cmd_nash(args) -> int:
    inst = _instance(args)
    traj = compute_trajectory(inst, start=empty_network_labels(inst), horizon=args.horizon)
    _emit(traj.to_json(), args.out)
    return 0


def cmd_thinflow(args) -> int:
    doc = _read_json(args.config)
    if args.instance:
        inst = _instance(args)
    elif "instance" in doc:
        src = doc["instance"]
        inst = load_instance(src) if isinstance(src, str) else parse_instance(src)
    else:
        raise CLIError("no instance: pass --instance or put one under \"instance\" in the config")
    cfg = Configuration.from_json(doc)
    validity = is_valid_configuration(inst, cfg)
    if not validity.ok:
        raise CLIError(f"invalid configuration: {validity.witness}")
    tf = solve_thin_flow(inst, cfg)
    report = check_thin_flow(inst, cfg, tf)
    if not report.passes:
        raise CLIError(f"thin flow failed its check (residual {report.max_residual:.3g})")
    _emit(tf.to_json(inst), args.out)
    return 0


def cmd_packets(args) -> int:
    inst = _instance(args)
    pinst = PacketInstance(inst, args.beta, args.count, not args.no_lead_packet)
    if args.profile:
        prof = PacketProfile.from_json(_read_json(args.profile))
    elif args.find_equilibrium:
        prof, status = find_packet_equilibrium(pinst, args.max_rounds)
        if not status.converged:
            print(f"warning: no equilibrium after {status.rounds} rounds "
                  f"(max improvement {status.max_improvement:.3g})", file=sys.stderr)
    else:
        prof = PacketProfile.uniform(pinst, simple_paths(inst)[0])
    if args.outcome_csv:
        out = simulate_packets(pinst, prof)
        _write_csv(args.outcome_csv, ("packet", "arc", "entry", "proc_start", "proc_end", "tail_arrival"),
                   out.csv_rows())
    _emit(prof.to_json(), args.out)
    return 0


def _classes_from(doc: Any, inst, args) -> list[StrategyClass]:
    if isinstance(doc, dict) and "paths" in doc:
        if args.beta is None:
            raise CLIError("a packet profile needs --beta")
        prof = PacketProfile.from_json(doc)
        first = min(prof.paths)
        pinst = PacketInstance(inst, args.beta, max(prof.paths), lead_packet=first == 0)
        return embed_packets(pinst, prof)
    items = doc["classes"] if isinstance(doc, dict) else doc
    return [StrategyClass.from_json(c) for c in items]


def cmd_verify(args) -> int:
    inst = _instance(args)
    classes = _classes_from(_read_json(args.profile), inst, args)
    out = load_profile(inst, classes)
    theta_max = args.theta_max
    report = {
        "epsilon": measure_epsilon(inst, out, theta_max),
        "strict_delta": measure_strict_delta(inst, out, theta_max),
        "residuals": outcome_residuals(out),
    }
    if args.arc_csv:
        folder = Path(args.arc_csv)
        folder.mkdir(parents=True, exist_ok=True)
        for a in inst.arcs:
            _write_csv(str(folder / f"{a.id}.csv"), ("time", "F_in", "F_out", "z"), out.csv_rows(a.id))
    _emit(report, args.report)
    return 0


def cmd_converge(args) -> int:
    try:
        betas = tuple(float(b) for b in args.betas.split(",") if b.strip())
    except ValueError as exc:
        raise CLIError(f"--betas: {exc}") from exc
    cfg = SweepConfig(
        betas,
        instance_path=args.instance,
        horizon=args.horizon,
        grid_step=args.grid,
        out_csv=args.out,
        summary_json=args.summary,
        plot_data=args.plot_data,
        max_rounds=args.max_rounds,
        eta=args.eta,
        record_wall_time=not args.no_wall_time,
    )
    rows = run_convergence_sweep(cfg)
    if args.out is None:
        sys.stdout.write(rows_to_csv(rows))
    return 0 if all(r.status == "converged" for r in rows) else 3


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fot", description="Flows over time: equilibria, packets and convergence.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, instance_required: bool = True):
        sp.add_argument("--instance", required=instance_required, help="instance JSON file")
        sp.add_argument("--eta", type=float, default=None, help="tolerance override")

    sp = sub.add_parser("nash", help="exact equilibrium trajectory from the empty network")
    common(sp)
    sp.add_argument("--horizon", type=float, default=None)
    sp.add_argument("--out", default=None, help="trajectory JSON (default stdout)")
    sp.set_defaults(func=cmd_nash)

    sp = sub.add_parser("thinflow", help="thin flow for one configuration")
    common(sp, instance_required=False)
    sp.add_argument("--config", required=True, help='JSON with "active", "resetting" and optionally "instance"')
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_thinflow)

    sp = sub.add_parser("packets", help="packet profiles and simulation")
    common(sp)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--find-equilibrium", action="store_true")
    sp.add_argument("--profile", default=None, help="simulate this profile instead")
    sp.add_argument("--max-rounds", type=int, default=20)
    sp.add_argument("--no-lead-packet", action="store_true", help="number packets from 1")
    sp.add_argument("--outcome-csv", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_packets)

    sp = sub.add_parser("verify", help="load a profile and measure epsilon and strict delta")
    common(sp)
    sp.add_argument("--profile", required=True, help="class list JSON or packet profile JSON")
    sp.add_argument("--beta", type=float, default=None, help="packet size for packet profiles")
    sp.add_argument("--theta-max", type=float, default=None)
    sp.add_argument("--arc-csv", default=None, help="directory for per-arc CSV exports")
    sp.add_argument("--report", default=None)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("converge", help="packet-size sweep against the exact trajectory")
    common(sp)
    sp.add_argument("--betas", default="1,0.5,0.25,0.125,0.0625")
    sp.add_argument("--horizon", type=float, default=10.0)
    sp.add_argument("--grid", type=float, default=0.01)
    sp.add_argument("--max-rounds", type=int, default=20)
    sp.add_argument("--out", default=None)
    sp.add_argument("--summary", default=None, help="JSON summary with the fitted slope")
    sp.add_argument("--plot-data", default=None)
    sp.add_argument("--no-wall-time", action="store_true", help="write 0 for wall_ms (byte-stable output)")
    sp.set_defaults(func=cmd_converge)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, InstanceError, OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"fot {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
