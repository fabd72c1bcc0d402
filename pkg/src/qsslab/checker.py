"""QSS-validity checks on pairs of long-term and QSS runs.

The checks test, along actual runs, the premises under which a QSS
trajectory stays close to the long-term one:

* the QSS trajectory never meets a singular point of the constraint manifold,
* every QSS sample lies on the stable part Gamma_s,
* the long-term initial point is attracted by the initial transient SEP,
* after every discrete jump the long-term point lies inside the region of
  attraction of the new transient SEP (consistent attraction),

and measure the resulting slow-variable gap and terminal behaviour.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .algebra import SINGULAR_RTOL, STABILITY_MARGIN, classify_point, jacobian_blocks
from .errors import EmptyOverlap, QSSLabError, Undecided
from .layout import PartitionedState
from .regions import INSIDE, OUTSIDE, UNDECIDED, BasinQuery, basin_membership, find_transient_sep
from .sim.engine import SimConfig, Trajectory, simulate_longterm, simulate_qss

PASS, FAIL, SKIPPED = "pass", "fail", "skipped"
CHECKS = ("s1_singularity", "gamma_s_along_qss", "initial_attraction", "consistent_attraction",
          "trajectory_gap", "omega_limit")


def _finite(v):
    return None if v is None or not math.isfinite(v) else float(v)


# --------------------------------------------------------------- fragments
@dataclass(frozen=True)
class GammaSResult:
    status: str
    first_violation_time: float | None = None
    margin: float | None = None
    worst_margin: float | None = None
    step: float | None = None

    def to_dict(self):
        return {"status": self.status, "first_violation_time": self.first_violation_time,
                "margin": _finite(self.margin), "worst_margin": _finite(self.worst_margin),
                "step": self.step}


@dataclass(frozen=True)
class AttractionResult:
    status: str
    answer: str
    detail: str = ""

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class EventAttraction:
    time: float
    device: str
    answer: str
    detail: str = ""

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class GapMetrics:
    times: np.ndarray
    slow_gap: np.ndarray
    fast_gap: np.ndarray
    per_variable: dict
    sup_slow: float
    t_sup_slow: float
    sup_fast: float
    blowup_time: float | None
    slow_names: tuple = ()
    fast_names: tuple = ()
    window: float = 0.0

    def to_dict(self):
        return {"sup_slow": self.sup_slow, "t_sup_slow": self.t_sup_slow,
                "sup_fast": _finite(self.sup_fast), "blowup_time": self.blowup_time,
                "boundary_layer_window": self.window,
                "per_variable_sup": {k: float(np.max(v)) if v.size else 0.0
                                     for k, v in self.per_variable.items()}}


@dataclass(frozen=True)
class OmegaLimit:
    verdict: str
    lt_behavior: str
    qss_behavior: str
    distance: float | None = None

    @property
    def mismatch(self) -> bool:
        return self.verdict != "same-SEP"

    def to_dict(self):
        return {"verdict": self.verdict, "lt_behavior": self.lt_behavior,
                "qss_behavior": self.qss_behavior, "distance": _finite(self.distance),
                "mismatch": self.mismatch}


# ------------------------------------------------------------------ checks
def check_gamma_s_along(model, qss: Trajectory) -> GammaSResult:
    """Every QSS sample must be a Gamma_s point; reports the worst margin."""
    classes = qss.classes if len(qss.classes) == len(qss.states) else \
        tuple(classify_point(jacobian_blocks(model, s, t)) for t, s in zip(qss.times, qss.states))
    worst = -math.inf
    first = None
    first_margin = None
    for t, c in zip(qss.times, classes):
        m = c.margin if not math.isnan(c.margin) else math.inf
        worst = max(worst, m)
        if not c.gamma_s_member and first is None:
            first, first_margin = float(t), m
    if qss.termination == "singular" and first is None:
        first, first_margin = float(qss.times[-1]), math.inf
    if first is None:
        return GammaSResult(PASS, worst_margin=worst, step=qss.step)
    return GammaSResult(FAIL, first, first_margin, worst, qss.step)


def check_initial_attraction(model, lt_init: PartitionedState, qss_init: PartitionedState,
                             cfg: SimConfig | None = None, t0=0.0, rho=1e-4) -> AttractionResult:
    """Long-term initial point versus the region of the initial transient SEP."""
    cfg = cfg or SimConfig()
    sep = find_transient_sep(model, lt_init.zc, lt_init.zd, (qss_init.x, qss_init.y), tol=cfg.alg_tol, t=t0)
    if not sep.stable:
        return AttractionResult(FAIL, UNDECIDED, "initial equilibrium is not in Gamma_s")
    q = BasinQuery(lt_init.zc, lt_init.zd, lt_init.x, lt_init.y, horizon=cfg.transient_horizon, rho=rho)
    ans = basin_membership(model, q, sep, cfg, t0=t0)
    return AttractionResult(PASS if ans == INSIDE else FAIL, ans)


def event_attraction(model, lt: Trajectory, k_event: int, cfg: SimConfig | None = None,
                     qss: Trajectory | None = None, rho=1e-4):
    """Post-jump point of event ``k_event``, its SEP and the membership answer.

    Returns ``(answer, post_jump_state, sep_or_None, detail)``.
    """
    cfg = cfg or SimConfig()
    ev = lt.events[k_event]
    i = lt.index_at(ev.time)
    s = lt.states[i]
    guesses = []
    if qss is not None and len(qss) and qss.times[0] <= ev.time + 1e-9:
        qs = qss.states[qss.index_at(ev.time)]
        guesses.append((qs.x, qs.y))
    guesses.append((s.x, s.y))
    sep = None
    detail = ""
    for guess in guesses:
        try:
            cand = find_transient_sep(model, s.zc, s.zd, guess, tol=cfg.alg_tol, t=ev.time)
        except QSSLabError as exc:
            detail = f"SEP solve failed: {exc}"
            continue
        if cand.stable:
            sep = cand
            break
        detail = "equilibrium found is not in Gamma_s"
    if sep is None:
        return UNDECIDED, s, None, detail
    q = BasinQuery(s.zc, s.zd, s.x, s.y, horizon=cfg.transient_horizon, rho=rho)
    return basin_membership(model, q, sep, cfg, t0=ev.time), s, sep, ""


def check_consistent_attraction(model, lt: Trajectory, cfg: SimConfig | None = None, qss=None,
                                t_from=-math.inf, threads=1, rho=1e-4):
    """Per-event membership of the post-jump point in the new SEP's region."""
    ks = [k for k, ev in enumerate(lt.events) if ev.time >= t_from - 1e-9]

    def one(k):
        ans, _, _, detail = event_attraction(model, lt, k, cfg, qss, rho)
        ev = lt.events[k]
        return EventAttraction(float(ev.time), ev.device, ans, detail)

    if threads > 1 and len(ks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, ks))
    return [one(k) for k in ks]


def _interp_parts(traj, part, names, times):
    L = traj.layout
    cols = [L.locate(n)[1] for n in names]
    data = traj.part(part)[:, cols] if cols else np.zeros((len(traj), 0))
    return np.column_stack([np.interp(times, traj.times, data[:, j]) for j in range(len(cols))]) \
        if cols else np.zeros((len(times), 0))


def compare_trajectories(lt: Trajectory, qss: Trajectory, slow_names=None, fast_names=None,
                         tau_fast=1.0, floor=1e-4) -> GapMetrics:
    """Slow and fast gaps on the coarser of the two time grids.

    The fast gap is masked (NaN) within ``5 tau_fast eps`` after the start
    of the overlap and after each event. ``blowup_time`` is the first time
    the slow gap exceeds ten times its running maximum (never below
    ``floor``).
    """
    t_lo = max(lt.times[0], qss.times[0])
    t_hi = min(lt.times[-1], qss.times[-1])
    if not t_hi >= t_lo:
        raise EmptyOverlap(f"no common time range ([{lt.times[0]}, {lt.times[-1]}] vs "
                           f"[{qss.times[0]}, {qss.times[-1]}])")
    coarse = lt if len(lt.times) > 1 and (len(qss.times) < 2 or lt.step >= qss.step) else qss
    if len(coarse.times) < 2:
        coarse = qss if coarse is lt else lt
    times = coarse.times[(coarse.times >= t_lo - 1e-9) & (coarse.times <= t_hi + 1e-9)]
    if times.size == 0:
        raise EmptyOverlap("no sample inside the common time range")
    slow_names = tuple(lt.layout.zc if slow_names is None else slow_names)
    fast_names = tuple(lt.layout.x if fast_names is None else fast_names)
    zl = _interp_parts(lt, "zc", slow_names, times)
    zq = _interp_parts(qss, "zc", slow_names, times)
    dz = np.abs(zl - zq)
    slow_gap = dz.max(axis=1) if dz.shape[1] else np.zeros(len(times))
    xl = _interp_parts(lt, "x", fast_names, times)
    xq = _interp_parts(qss, "x", fast_names, times)
    dx = np.abs(xl - xq)
    fast_gap = dx.max(axis=1) if dx.shape[1] else np.zeros(len(times))
    window = 5.0 * tau_fast * lt.epsilon_scale
    starts = [t_lo] + [e.time for e in lt.events] + [e.time for e in qss.events]
    mask = np.zeros(len(times), dtype=bool)
    for ts in starts:
        mask |= (times >= ts - 1e-9) & (times < ts + window)
    fast_gap = np.where(mask, np.nan, fast_gap)
    k = int(np.argmax(slow_gap))
    blowup = None
    running = 0.0
    for t, gval in zip(times, slow_gap):
        if gval > 10.0 * max(running, floor):
            blowup = float(t)
            break
        running = max(running, gval)
    finite_fast = fast_gap[np.isfinite(fast_gap)]
    return GapMetrics(times=times, slow_gap=slow_gap, fast_gap=fast_gap,
                      per_variable={n: dz[:, j] for j, n in enumerate(slow_names)},
                      sup_slow=float(slow_gap[k]), t_sup_slow=float(times[k]),
                      sup_fast=float(finite_fast.max()) if finite_fast.size else 0.0,
                      blowup_time=blowup, slow_names=slow_names, fast_names=fast_names, window=window)


def _behavior(traj):
    if traj.termination == "converged":
        return "converged"
    if traj.termination == "limit-cycle":
        return "limit-cycle"
    if traj.termination == "horizon-reached":
        return "horizon-reached"
    return "diverged"


def compare_omega_limits(lt: Trajectory, qss: Trajectory, tol=1e-4) -> OmegaLimit:
    """Terminal behaviour of both runs; ``same-SEP`` when both converge to one point."""
    bl, bq = _behavior(lt), _behavior(qss)
    if bl == "horizon-reached" and bq == "horizon-reached":
        raise Undecided("both runs exhausted their horizon before settling")
    if bq == "horizon-reached" and bl == "converged":
        raise Undecided("QSS run exhausted its horizon before settling")
    if bl == "horizon-reached" and bq == "converged":
        raise Undecided("long-term run exhausted its horizon before settling")
    if bl == "converged" and bq == "converged":
        a, b = lt.final, qss.final
        parts = [np.abs(a.zc - b.zc), np.abs(a.x - b.x), np.abs(a.y - b.y)]
        d = max((float(p.max()) for p in parts if p.size), default=0.0)
        return OmegaLimit("same-SEP" if d <= tol else "mismatch", bl, bq, d)
    if bq in ("diverged", "limit-cycle"):
        return OmegaLimit("QSS-diverged", bl, bq)
    if bl == "limit-cycle":
        return OmegaLimit("LT-limit-cycle", bl, bq)
    if bl == "diverged":
        return OmegaLimit("LT-diverged", bl, bq)
    return OmegaLimit("mismatch", bl, bq)


# ------------------------------------------------------------------ report
@dataclass(frozen=True)
class VerdictReport:
    s1_singularity: dict
    gamma_s_along_qss: dict
    initial_attraction: dict
    consistent_attraction: list
    trajectory_gap: dict
    omega_limit: dict
    overall: str
    details: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.overall == "QSS-valid"

    def to_dict(self):
        return {"s1_singularity": self.s1_singularity, "gamma_s_along_qss": self.gamma_s_along_qss,
                "initial_attraction": self.initial_attraction,
                "consistent_attraction": self.consistent_attraction,
                "trajectory_gap": self.trajectory_gap, "omega_limit": self.omega_limit,
                "overall": self.overall, "details": self.details}


@dataclass(frozen=True)
class RunPair:
    """Long-term and QSS runs of one scenario plus the model they used."""

    model: object
    lt: Trajectory
    qss: Trajectory
    lt_init: PartitionedState
    t_qss: float


def run_pair(model, init: PartitionedState, cfg: SimConfig) -> RunPair:
    """Long-term run from ``init`` at t = 0; QSS run from the long-term state at qss_start_time."""
    lt = simulate_longterm(model, init, cfg)
    i = lt.index_at(cfg.qss_start_time)
    t_qss = float(lt.times[i])
    timers = lt.timers[i] if lt.timers else None
    qss = simulate_qss(model, lt.states[i], cfg, t0=t_qss, timers=timers)
    return RunPair(model, lt, qss, lt.states[i], t_qss)


def assess(pair: RunPair, cfg: SimConfig, delta=1e-2, checks=CHECKS, threads=1,
           tau_fast=None, rho=1e-4) -> VerdictReport:
    """All enabled checks on an existing run pair."""
    model, lt, qss = pair.model, pair.lt, pair.qss
    enabled = set(checks)
    skipped = {"status": SKIPPED}
    tau_fast = model.fast_time_constant() if tau_fast is None else tau_fast
    problems = []

    s1 = dict(skipped)
    if "s1_singularity" in enabled:
        if qss.termination == "singular":
            s1 = {"status": FAIL, "time": float(qss.times[-1]), "message": qss.message}
            problems.append("singularity")
        else:
            s1 = {"status": PASS}

    gam = dict(skipped)
    if "gamma_s_along_qss" in enabled:
        g = check_gamma_s_along(model, qss)
        gam = g.to_dict()
        if g.status == FAIL:
            problems.append("gamma-s")

    init = dict(skipped)
    if "initial_attraction" in enabled:
        try:
            r = check_initial_attraction(model, pair.lt_init, qss.states[0], cfg, t0=pair.t_qss, rho=rho)
            init = r.to_dict()
            if r.status == FAIL:
                problems.append("unverified" if r.answer == UNDECIDED else "initial-attraction")
        except QSSLabError as exc:
            init = {"status": FAIL, "answer": UNDECIDED, "detail": str(exc)}
            problems.append("unverified")

    cons = []
    if "consistent_attraction" in enabled:
        results = check_consistent_attraction(model, lt, cfg, qss, t_from=pair.t_qss, threads=threads, rho=rho)
        cons = [r.to_dict() for r in results]
        if any(r.answer == OUTSIDE for r in results):
            problems.insert(0, "consistent-attraction")
        elif any(r.answer == UNDECIDED for r in results):
            problems.append("unverified")

    gap = dict(skipped)
    metrics = None
    if "trajectory_gap" in enabled:
        try:
            metrics = compare_trajectories(lt, qss, tau_fast=tau_fast, floor=delta / 100.0)
            gap = metrics.to_dict()
            gap["delta"] = delta
            gap["status"] = PASS if metrics.sup_slow <= delta else FAIL
            if metrics.sup_slow > delta:
                problems.append("trajectory-gap")
        except EmptyOverlap as exc:
            gap = {"status": FAIL, "detail": str(exc)}
            problems.append("unverified")

    omega = dict(skipped)
    if "omega_limit" in enabled:
        try:
            om = compare_omega_limits(lt, qss)
            omega = om.to_dict()
            if om.mismatch:
                problems.append("omega-limit")
        except Undecided as exc:
            omega = {"verdict": "undecided", "detail": str(exc), "mismatch": True}
            problems.append("unverified")

    if "consistent-attraction" in problems:
        overall = "QSS-invalid: consistent-attraction"
    elif problems:
        overall = f"QSS-invalid: {problems[0]}"
    else:
        overall = "QSS-valid"
    details = {
        "lt_termination": lt.termination, "lt_message": lt.message, "lt_end_time": float(lt.times[-1]),
        "qss_termination": qss.termination, "qss_message": qss.message,
        "qss_start_time": pair.t_qss, "qss_end_time": float(qss.times[-1]),
        "events": [{"time": float(e.time), "device": e.device, "old": float(e.old), "new": float(e.new)}
                   for e in lt.events],
        "qss_events": [{"time": float(e.time), "device": e.device, "old": float(e.old), "new": float(e.new)}
                       for e in qss.events],
        "h_l": cfg.h_l, "h_q": cfg.h_q, "h_t": cfg.h_t, "epsilon_scale": cfg.epsilon_scale,
        "singularity_rtol": SINGULAR_RTOL, "stability_margin": STABILITY_MARGIN, "rho": rho,
        "checks": [c for c in CHECKS if c in enabled],
    }
    return VerdictReport(s1, gam, init, cons, gap, omega, overall, details)


def diagnose(model, scenario, threads=1) -> VerdictReport:
    """Run both simulations of ``scenario`` and every enabled check.

    ``scenario`` is a :class:`qsslab.io.ScenarioConfig`; ``model`` may be
    None, in which case the scenario builds it.
    """
    built_model, init = scenario.build()
    model = built_model if model is None else model
    pair = run_pair(model, init, scenario.sim)
    return assess(pair, scenario.sim, delta=scenario.delta, checks=scenario.checks, threads=threads)
