"""Transient, long-term and QSS time-domain simulation.

All three models share one fixed-grid loop. Samples sit on the nominal grid
``t0 + k h``; a failed step is retried as two half steps, recursively down
to ``h/64``, without adding samples. Discrete updates run at sample times
only; an event replaces the sample at that time with the post-jump state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ..algebra import classify_point, jacobian_blocks, solve_algebraic, solve_equilibrium_fast
from ..errors import (Diverged, MaxIterations, NoConvergence, NonFiniteEntry, QSSLabError, SingularJacobian,
                      SolverFailure, ValidationError)
from ..layout import PartitionedState

TERMINATIONS = ("horizon-reached", "converged", "diverged", "singular", "solver-failure", "limit-cycle")
MAX_HALVINGS = 6


@dataclass(frozen=True)
class SimConfig:
    """Integration settings; times in seconds."""

    h_t: float = 0.01
    h_l: float = 0.05
    h_q: float = 1.0
    horizon: float = 300.0
    newton_tol: float = 1e-8
    alg_tol: float = 1e-10
    epsilon_scale: float = 1.0
    qss_start_time: float = 30.0
    transient_horizon: float = 60.0
    divergence_bound: float = 1e6
    angle_bound: float = math.pi
    converge_tol: float = 1e-8
    slow_converge_tol: float = 1e-7
    converge_hold: float = 1.0
    limit_cycle_tol: float = 1e-4
    limit_cycle_returns: int = 3
    settle_time: float = 5.0

    def __post_init__(self):
        for name in ("h_t", "h_l", "h_q", "horizon", "newton_tol", "alg_tol", "epsilon_scale",
                     "transient_horizon", "divergence_bound", "converge_hold"):
            if not getattr(self, name) > 0:
                raise ValidationError("must be > 0", key=f"sim.{name}")
        if self.qss_start_time < 0:
            raise ValidationError("must be >= 0", key="sim.qss_start_time")
        if self.horizon < self.qss_start_time:
            raise ValidationError("horizon must be >= qss_start_time", key="sim.horizon")

    @classmethod
    def field_names(cls):
        return tuple(f.name for f in fields(cls))

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class Trajectory:
    """Sampled run of one model.

    ``events`` holds :class:`~qsslab.netmodel.system.Event` records (or any
    object with ``time, device, old, new``); ``classes`` is filled by QSS
    runs with one :class:`~qsslab.algebra.ManifoldPointClass` per sample.
    """

    mode: str
    times: np.ndarray
    states: tuple
    events: tuple = ()
    termination: str = "horizon-reached"
    message: str = ""
    step: float = 0.0
    classes: tuple = ()
    timers: tuple = field(default=(), repr=False)
    epsilon_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "events", tuple(self.events))
        if self.termination not in TERMINATIONS:
            raise ValueError(f"unknown termination {self.termination!r}")

    @property
    def layout(self):
        return self.states[0].layout

    @property
    def samples(self):
        return list(zip(self.times, self.states))

    @property
    def final(self) -> PartitionedState:
        return self.states[-1]

    def __len__(self):
        return len(self.states)

    def part(self, name: str) -> np.ndarray:
        """Stacked samples of one partition (``zc``, ``zd``, ``x`` or ``y``)."""
        return np.array([getattr(s, name) for s in self.states]).reshape(len(self.states), -1)

    def series(self, var: str) -> np.ndarray:
        part, i = self.layout.locate(var)
        return np.array([getattr(s, part)[i] for s in self.states])

    def index_at(self, t: float) -> int:
        """Index of the last sample with time <= t."""
        k = int(np.searchsorted(self.times, t + 1e-9, side="right")) - 1
        return max(k, 0)

    def window(self, t_start: float, t_end: float) -> "Trajectory":
        mask = (self.times >= t_start - 1e-9) & (self.times <= t_end + 1e-9)
        idx = np.flatnonzero(mask)
        return replace(self, times=self.times[idx], states=[self.states[i] for i in idx],
                       events=[e for e in self.events if t_start - 1e-9 <= e.time <= t_end + 1e-9],
                       classes=tuple(self.classes[i] for i in idx) if self.classes else (),
                       timers=tuple(self.timers[i] for i in idx) if self.timers else ())

    def raise_for_termination(self):
        """Raise the error matching an abnormal termination."""
        if self.termination == "diverged":
            raise Diverged(self.message)
        if self.termination == "singular":
            raise SingularJacobian(self.message)
        if self.termination == "solver-failure":
            raise SolverFailure(self.message)


class LimitCycleDetector:
    """Poincare-section test for a sustained oscillation of the fast state.

    The section is the hyperplane through a reference point normal to the
    fast velocity there. Crossings in the positive direction are located by
    linear interpolation; when consecutive crossings agree within ``tol``
    for ``returns`` times in a row while ``|f|`` stays above ``tol``, the
    run is declared trapped in a limit cycle.
    """

    def __init__(self, tol=1e-4, returns=3):
        self.tol = tol
        self.returns = returns
        self.reset()

    def reset(self):
        self.anchor = None
        self.normal = None
        self.prev = None
        self.crossings = []
        self.count = 0

    def update(self, point, velocity) -> bool:
        point = np.asarray(point, float)
        vnorm = float(np.max(np.abs(velocity))) if velocity.size else 0.0
        if vnorm <= self.tol:
            self.reset()
            return False
        if self.anchor is None:
            self.anchor = point.copy()
            self.normal = np.asarray(velocity, float) / np.linalg.norm(velocity)
            self.prev = point
            return False
        s_prev = float(self.normal @ (self.prev - self.anchor))
        s_now = float(self.normal @ (point - self.anchor))
        crossed = s_prev < 0.0 <= s_now
        if crossed:
            w = s_prev / (s_prev - s_now)
            c = self.prev + w * (point - self.prev)
            if self.crossings and np.max(np.abs(c - self.crossings[-1])) < self.tol:
                self.count += 1
            else:
                self.count = 0
            self.crossings.append(c)
        self.prev = point
        return self.count >= self.returns


def _inf_norm(*arrays):
    return max((float(np.max(np.abs(a))) for a in arrays if a.size), default=0.0)


def _consistent_y(model, s, alg_tol, t):
    _, _, g = model.eval_all(t, s.zc, s.zd, s.x, s.y)
    if g.size and np.max(np.abs(g)) > alg_tol:
        return s.replace(y=solve_algebraic(model, s, tol=alg_tol, t=t))
    return s


def qss_project(model, state: PartitionedState, tol=1e-10, t=0.0) -> PartitionedState:
    """Point on the constraint manifold with the same (zc, zd).

    (x, y) are replaced by the equilibrium of the frozen transient model
    reached by Newton from the given (x, y).
    """
    state.check(model.layout)
    x, y = solve_equilibrium_fast(model, state.zc, state.zd, (state.x, state.y), tol=tol, t=t)
    return state.replace(x=x, y=y)


def _advance(stepper, t, h, zc, zd, x, y, depth=0):
    try:
        return stepper.step(t, h, zc, zd, x, y)
    except (NoConvergence, MaxIterations, NonFiniteEntry, SingularJacobian, FloatingPointError,
            OverflowError, ValueError):
        if depth >= MAX_HALVINGS:
            raise
        stepper.invalidate()
        zc, x, y = _advance(stepper, t, 0.5 * h, zc, zd, x, y, depth + 1)
        return _advance(stepper, t + 0.5 * h, 0.5 * h, zc, zd, x, y, depth + 1)


def _run(model, mode, init, cfg, h, t0, horizon, timers=None, events_on=False,
         detect_limit_cycle=False, classify=False):
    eps = cfg.epsilon_scale
    stepper = model.make_stepper(mode, eps, cfg.newton_tol)
    stepper.alg_tol = cfg.alg_tol
    n_steps = int(round((horizon - t0) / h))
    s = init
    events = []
    times = [t0]
    states = [s]
    timer_log = []
    classes = []
    termination = "horizon-reached"
    message = ""
    if events_on and timers is None:
        timers = model.init_timers(s, t0)
    if events_on:
        timer_log.append(timers)
    hold_start = None
    detector = LimitCycleDetector(cfg.limit_cycle_tol, cfg.limit_cycle_returns) if detect_limit_cycle else None
    last_event_t = t0
    prev_det = None
    bound = cfg.divergence_bound

    def check_point(s, t):
        nonlocal prev_det
        if not classify:
            return None
        c = classify_point(jacobian_blocks(model, s, t))
        classes.append(c)
        flipped = prev_det is not None and c.det_sign != 0 and c.det_sign != prev_det
        prev_det = c.det_sign if c.det_sign != 0 else prev_det
        if c.singular or flipped:
            return f"constraint manifold singular at t = {t:.6g}"
        return None

    msg = check_point(s, t0)
    if msg:
        termination, message = "singular", msg
    k = 0
    while termination == "horizon-reached" and k < n_steps:
        t = t0 + k * h
        if events_on and model.has_discrete:
            zd_new, fired, timers = model.eval_discrete_update(s, timers, t)
            if fired:
                pre = s
                s = s.replace(zd=zd_new)
                try:
                    if mode == "qss":
                        s = qss_project(model, s, tol=cfg.alg_tol, t=t)
                    else:
                        s = s.replace(y=solve_algebraic(model, s, tol=cfg.alg_tol, t=t))
                except SingularJacobian as exc:
                    termination, message = "singular", f"after event at t = {t:.6g}: {exc}"
                except (MaxIterations, NonFiniteEntry) as exc:
                    termination, message = "solver-failure", f"after event at t = {t:.6g}: {exc}"
                events.extend(fired)
                if termination != "horizon-reached":
                    s = pre
                    break
                states[-1] = s
                if classify:
                    classes.pop()
                    msg = check_point(s, t)
                    if msg:
                        termination, message = "singular", msg
                        break
                stepper.invalidate()
                hold_start = None
                last_event_t = t
                if detector is not None:
                    detector.reset()
            timer_log[-1] = timers
        t1 = t0 + (k + 1) * h
        try:
            # nominal h: a rounded t1 - t would force needless matrix refreshes
            zc, x, y = _advance(stepper, t, h, s.zc, s.zd, s.x, s.y)
        except SingularJacobian as exc:
            termination, message = "singular", str(exc)
            break
        except (NoConvergence, MaxIterations, NonFiniteEntry, FloatingPointError, OverflowError,
                ValueError) as exc:
            termination, message = "solver-failure", str(exc)
            break
        if not (np.all(np.isfinite(zc)) and np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            termination, message = "diverged", f"non-finite state at t = {t1:.6g}"
            break
        s = s.replace(zc=zc, x=x, y=y)
        k += 1
        times.append(t1)
        states.append(s)
        if events_on:
            timer_log.append(timers)
        if _inf_norm(zc, x, y) > bound:
            termination, message = "diverged", f"state norm above {bound:g} at t = {t1:.6g}"
            break
        if model.angle_spread(x, y) > cfg.angle_bound:
            termination, message = "diverged", f"loss of synchronism at t = {t1:.6g}"
            break
        msg = check_point(s, t1)
        if msg:
            termination, message = "singular", msg
            break
        hc, f, g = stepper.last_eval
        if mode == "transient":
            quiet = _inf_norm(f) < cfg.converge_tol
        elif mode == "longterm":
            quiet = _inf_norm(hc, f) < cfg.slow_converge_tol
        else:
            quiet = _inf_norm(hc) < cfg.slow_converge_tol
        if quiet and events_on and model.discrete_pending(timers, s):
            quiet = False
        if quiet:
            if hold_start is None:
                hold_start = t1
            elif t1 - hold_start >= cfg.converge_hold - 1e-9:
                termination = "converged"
                break
        else:
            hold_start = None
        if detector is not None and t1 - last_event_t >= cfg.settle_time:
            if detector.update(model.wrap_fast(x), f):
                termination, message = "limit-cycle", f"sustained oscillation detected at t = {t1:.6g}"
                break
    return Trajectory(mode=mode, times=times, states=states, events=events,
                      termination=termination, message=message, step=h,
                      classes=tuple(classes), timers=tuple(timer_log), epsilon_scale=cfg.epsilon_scale)


def _check_strict(traj, strict):
    if strict:
        traj.raise_for_termination()
    return traj


def simulate_transient(model, zc, zd, init, cfg: SimConfig = SimConfig(), t0=0.0, horizon=None,
                       strict=False, detect_limit_cycle=False) -> Trajectory:
    """Transient model: zc and zd frozen, x integrated with g = 0 enforced.

    ``init`` is an (x, y) pair or a :class:`PartitionedState` (whose zc, zd
    are then ignored in favour of the arguments).
    """
    L = model.layout
    if isinstance(init, PartitionedState):
        x0, y0 = init.x, init.y
    else:
        x0, y0 = init
    s = PartitionedState(L, zc=zc, zd=zd, x=x0, y=y0)
    horizon = cfg.transient_horizon if horizon is None else horizon
    s = _consistent_y(model, s, cfg.alg_tol, t0)
    traj = _run(model, "transient", s, cfg, cfg.h_t, t0, t0 + horizon,
                detect_limit_cycle=detect_limit_cycle)
    return _check_strict(traj, strict)


def simulate_longterm(model, init: PartitionedState, cfg: SimConfig = SimConfig(), t0=0.0,
                      horizon=None, timers=None, freeze_discrete=False, strict=False,
                      detect_limit_cycle=True) -> Trajectory:
    """Full hybrid model; LTC updates at sample times unless ``freeze_discrete``."""
    init.check(model.layout)
    horizon = cfg.horizon if horizon is None else horizon
    s = _consistent_y(model, init, cfg.alg_tol, t0)
    traj = _run(model, "longterm", s, cfg, cfg.h_l, t0, horizon, timers=timers,
                events_on=not freeze_discrete, detect_limit_cycle=detect_limit_cycle)
    return _check_strict(traj, strict)


def simulate_qss(model, init: PartitionedState, cfg: SimConfig = SimConfig(), t0=0.0,
                 horizon=None, timers=None, strict=False) -> Trajectory:
    """QSS model: zc integrated with (x, y) held on the constraint manifold.

    Each accepted sample is classified; a singular point, or a sign change
    of the block-matrix determinant between consecutive samples, ends the
    run with termination ``singular``.
    """
    init.check(model.layout)
    horizon = cfg.horizon if horizon is None else horizon
    try:
        s = qss_project(model, init, tol=cfg.alg_tol, t=t0)
    except SingularJacobian as exc:
        traj = Trajectory("qss", [t0], [init], termination="singular", message=str(exc), step=cfg.h_q)
        return _check_strict(traj, strict)
    except QSSLabError as exc:
        traj = Trajectory("qss", [t0], [init], termination="solver-failure", message=str(exc), step=cfg.h_q)
        return _check_strict(traj, strict)
    traj = _run(model, "qss", s, cfg, cfg.h_q, t0, horizon, timers=timers, events_on=True, classify=True)
    return _check_strict(traj, strict)
