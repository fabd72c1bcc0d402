"""Command-line front end: ``qsslab {simulate,check,compare,basin}``.

Exit codes
----------
0   success (stable run, QSS-valid report, gap within delta, ...)
1   usage or configuration error
2   ``simulate`` ended diverged, singular, limit-cycle or solver-failure
3   ``check``/``compare`` found the QSS approximation invalid
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checker import (assess, compare_omega_limits, compare_trajectories, event_attraction, run_pair)
from .errors import EmptyOverlap, QSSLabError, Undecided, ValidationError
from .io import (load_scenario, write_events, write_gaps, write_grid, write_report, write_trajectory)
from .regions import _fast_axes, sample_basin_slice
from .sim.engine import simulate_longterm, simulate_transient

EXIT_OK, EXIT_ERROR, EXIT_UNSTABLE, EXIT_INVALID = 0, 1, 2, 3
UNSTABLE = ("diverged", "singular", "limit-cycle", "solver-failure")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this tool reserves 2 for instability."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario(args):
    return load_scenario(Path(args.scenario), backend=getattr(args, "backend", None))


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    model, init = sc.build()
    cfg = sc.sim
    if args.model == "transient":
        traj = simulate_transient(model, init.zc, init.zd, (init.x, init.y), cfg, detect_limit_cycle=True)
    elif args.model == "longterm":
        traj = simulate_longterm(model, init, cfg)
    else:
        traj = run_pair(model, init, cfg).qss
    out = _out_dir(args.out)
    write_trajectory(traj, out / "trajectory.csv")
    write_events(traj, out / "events.csv")
    print(f"{args.model}: {traj.termination} at t = {traj.times[-1]:.6g} s "
          f"({len(traj.times)} samples, {len(traj.events)} events)")
    if traj.message:
        print(traj.message, file=sys.stderr)
    return EXIT_UNSTABLE if traj.termination in UNSTABLE else EXIT_OK


def cmd_check(args) -> int:
    sc = _scenario(args)
    model, init = sc.build()
    pair = run_pair(model, init, sc.sim)
    report = assess(pair, sc.sim, delta=sc.delta, checks=sc.checks, threads=args.threads)
    out = _out_dir(args.out)
    write_report(report, out / "report.json")
    print(report.overall)
    return EXIT_OK if report.valid else EXIT_INVALID


def cmd_compare(args) -> int:
    sc = _scenario(args)
    delta = sc.delta if args.delta is None else args.delta
    if not delta > 0:
        raise ValidationError("must be > 0", key="delta")
    model, init = sc.build()
    pair = run_pair(model, init, sc.sim)
    out = _out_dir(args.out)
    verdict = {"delta": delta}
    try:
        metrics = compare_trajectories(pair.lt, pair.qss, tau_fast=model.fast_time_constant(),
                                       floor=delta / 100.0)
        write_gaps(metrics, out / "gap.csv")
        verdict["trajectory_gap"] = metrics.to_dict()
        gap_ok = metrics.sup_slow <= delta
    except EmptyOverlap as exc:
        verdict["trajectory_gap"] = {"detail": str(exc)}
        gap_ok = False
    try:
        omega = compare_omega_limits(pair.lt, pair.qss)
        verdict["omega_limit"] = omega.to_dict()
        same = not omega.mismatch
    except Undecided as exc:
        verdict["omega_limit"] = {"verdict": "undecided", "detail": str(exc), "mismatch": True}
        same = False
    verdict["pass"] = bool(gap_ok and same)
    write_report(verdict, out / "verdict.json")
    print(f"sup slow gap {verdict['trajectory_gap'].get('sup_slow', float('nan')):.3e}, "
          f"omega limit {verdict['omega_limit']['verdict']}")
    return EXIT_OK if verdict["pass"] else EXIT_INVALID


def _floats(text, n, what):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ValidationError("expected comma-separated numbers", key=what) from None
    if len(vals) not in n:
        raise ValidationError(f"expected {' or '.join(map(str, n))} values", key=what)
    return vals


def _pick_event(events, which):
    """``which`` is a 1-based event index or, when it contains a '.', an event time."""
    if not events:
        raise ValidationError("the long-term run has no events", key="at-event")
    if "." in which or "e" in which.lower():
        t = float(which)
        k = int(np.argmin([abs(e.time - t) for e in events]))
        if abs(events[k].time - t) > 1e-6 * max(1.0, abs(t)) + 1e-9:
            raise ValidationError(f"no event at t = {t}; event times: "
                                  f"{', '.join(f'{e.time:g}' for e in events)}", key="at-event")
        return k
    k = int(which)
    if not 1 <= k <= len(events):
        raise ValidationError(f"event index must be in 1..{len(events)}", key="at-event")
    return k - 1


def cmd_basin(args) -> int:
    sc = _scenario(args)
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    model, init = sc.build()
    # validate axes before the simulations
    _fast_axes(model, axes)
    bounds = _floats(args.bounds, (2 * len(axes),), "bounds")
    res = [int(v) for v in _floats(args.res, (len(axes),), "res")]
    pair = run_pair(model, init, sc.sim)
    k = _pick_event(pair.lt.events, args.at_event)
    ev = pair.lt.events[k]
    answer, post, sep, detail = event_attraction(model, pair.lt, k, sc.sim, pair.qss)
    if sep is None:
        raise QSSLabError(f"no stable transient equilibrium after event {k + 1}: {detail}")
    grid = sample_basin_slice(model, sep.zc, sep.zd, sep, axes, bounds, res, sc.sim,
                              threads=args.threads, query=(post.x, post.y), t0=ev.time)
    out = _out_dir(args.out)
    write_grid(grid, out / "grid.csv")
    point = {
        "event": {"index": k + 1, "time": ev.time, "device": ev.device, "old": ev.old, "new": ev.new},
        "axes": list(axes),
        "post_jump_point": list(grid.query_point),
        "post_jump_cell": list(grid.query_cell) if grid.query_cell is not None else None,
        "post_jump_class": answer,
        "sep_point": list(grid.sep_point),
        "sep_cell": list(grid.sep_cell) if grid.sep_cell is not None else None,
        "sep_margin": sep.cls.margin,
    }
    write_report(point, out / "point.json")
    print(f"event {k + 1} at t = {ev.time:g} s ({ev.device}): post-jump point {answer}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qsslab", description="Long-term versus QSS simulation and validity checks.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp):
        sp.add_argument("--scenario", required=True, help="scenario JSON file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--backend", choices=("compiled", "python"), default=None,
                        help="residual kernel (default: compiled when available)")

    s = sub.add_parser("simulate", help="run one model and write its trajectory")
    common(s)
    s.add_argument("--model", required=True, choices=("transient", "longterm", "qss"))
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check", help="run every enabled validity check")
    common(c)
    c.add_argument("--threads", type=int, default=1)
    c.set_defaults(func=cmd_check)

    m = sub.add_parser("compare", help="trajectory gap and omega-limit comparison")
    common(m)
    m.add_argument("--delta", type=float, default=None, help="slow-gap tolerance (p.u.)")
    m.set_defaults(func=cmd_compare)

    b = sub.add_parser("basin", help="classify a grid slice of the post-event stability region")
    common(b)
    b.add_argument("--at-event", required=True, help="1-based event index, or an event time in seconds")
    b.add_argument("--axes", required=True, help="one or two fast variable names, comma-separated")
    b.add_argument("--bounds", required=True, help="lo,hi per axis")
    b.add_argument("--res", required=True, help="cells per axis")
    b.add_argument("--threads", type=int, default=1)
    b.set_defaults(func=cmd_basin)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (QSSLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
