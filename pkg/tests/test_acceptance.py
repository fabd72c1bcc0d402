"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the lines
next to the measured values.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg

from qsslab.algebra import classify_point, jacobian_blocks, reduced_jacobian
from qsslab.checker import assess, compare_omega_limits, compare_trajectories, run_pair
from qsslab.fixtures import fold_crossing, linear_two_timescale, random_linear_dae
from qsslab.io import load_scenario
from qsslab.sim import SimConfig, simulate_longterm, simulate_qss, simulate_transient

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def report_line(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


# ------------------------------------------------------------------ 1
def test_criterion_1_epsilon_scaling(report_line):
    t0 = time.perf_counter()
    gaps = []
    for eps in (1e-1, 1e-2, 1e-3):
        model, init = linear_two_timescale(1.0, 0.0)
        cfg = SimConfig(epsilon_scale=eps, h_l=eps / 4, horizon=5.0, qss_start_time=0.0)
        pair = run_pair(model, init, cfg)
        gaps.append(compare_trajectories(pair.lt, pair.qss).sup_slow)
    runtime = time.perf_counter() - t0
    # closed form: z + eps x is conserved, so LT settles at 1 / (1 + eps) while QSS keeps z = 1
    exact = [1 - 1 / (1 + e) for e in (1e-1, 1e-2, 1e-3)]
    ratios = [gaps[1] / gaps[0], gaps[2] / gaps[1]]
    ok = (gaps[0] > gaps[1] > gaps[2] and all(0.03 <= r <= 0.3 for r in ratios) and runtime < 10
          and np.allclose(gaps, exact, rtol=1e-3))
    report_line(1, ok, f"gaps {['%.3e' % g for g in gaps]} ratios {['%.3f' % r for r in ratios]} "
                       f"runtime {runtime:.2f} s")
    assert ok


# ------------------------------------------------------------------ 2
def test_criterion_2_success_scenario(report_line, success_path):
    t0 = time.perf_counter()
    sc = load_scenario(success_path)
    model, init = sc.build()
    pair = run_pair(model, init, sc.sim)
    report = assess(pair, sc.sim, delta=sc.delta, checks=sc.checks)
    runtime = time.perf_counter() - t0
    answers = [e["answer"] for e in report.consistent_attraction]
    om = compare_omega_limits(pair.lt, pair.qss)
    ok = (report.overall == "QSS-valid" and answers and all(a == "inside" for a in answers)
          and report.trajectory_gap["sup_slow"] <= 1e-2 and om.distance is not None and om.distance <= 1e-4
          and runtime < 60)
    report_line(2, ok, f"{report.overall}; events {answers}; sup slow gap "
                       f"{report.trajectory_gap['sup_slow']:.3e}; final distance {om.distance:.2e}; "
                       f"runtime {runtime:.1f} s")
    assert ok


# ------------------------------------------------------------------ 3
def test_criterion_3_failure_scenario(report_line, failure_path):
    t0 = time.perf_counter()
    sc = load_scenario(failure_path)
    model, init = sc.build()
    pair = run_pair(model, init, sc.sim)
    report = assess(pair, sc.sim, delta=sc.delta, checks=sc.checks)
    runtime = time.perf_counter() - t0
    outside = [e["time"] for e in report.consistent_attraction if e["answer"] == "outside"]
    blowup = report.trajectory_gap.get("blowup_time")
    parts = {
        "qss converged": pair.qss.termination == "converged",
        "lt unstable": pair.lt.termination in ("limit-cycle", "diverged"),
        "verdict": report.overall == "QSS-invalid: consistent-attraction",
        "outside before blowup": bool(outside) and blowup is not None and outside[0] < blowup,
        "runtime": runtime < 120,
    }
    ok = all(parts.values())
    report_line(3, ok, f"lt {pair.lt.termination} at {pair.lt.times[-1]:.2f} s; qss {pair.qss.termination}; "
                       f"{report.overall}; first outside event {outside[:1]}; gap blowup {blowup}; "
                       f"sup slow gap {report.trajectory_gap['sup_slow']:.2e}; runtime {runtime:.1f} s; "
                       f"failed: {[k for k, v in parts.items() if not v]}")
    assert ok


# ------------------------------------------------------------------ 4
def _pencil_spectrum(A, B, C, D):
    """Finite eigenvalues of the pencil ([A B; C D], diag(I, 0)) by QZ."""
    nx = A.shape[0]
    J = np.block([[A, B], [C, D]])
    E = np.zeros_like(J)
    E[:nx, :nx] = np.eye(nx)
    w = scipy.linalg.eigvals(J, E, homogeneous_eigvals=True)
    alpha, beta = w
    finite = np.abs(beta) > 1e-10 * np.abs(alpha).max()
    return alpha[finite] / beta[finite]


def _decay_sign(model, nx, rng):
    x0 = 1e-3 * rng.standard_normal(nx)
    cfg = SimConfig(h_t=0.02, divergence_bound=1e3, converge_tol=1e-300)
    traj = simulate_transient(model, [], [], (x0, np.zeros(len(model.layout.y))), cfg, horizon=80.0)
    if traj.termination == "diverged":
        return 1
    return 1 if np.linalg.norm(traj.final.x) > np.linalg.norm(x0) else -1


def test_criterion_4_reduced_spectrum_oracle(report_line):
    rng = np.random.default_rng(4)
    worst = 0.0
    mismatches = 0
    for _ in range(100):
        model, init, (A, B, C, D) = random_linear_dae(rng)
        blocks = jacobian_blocks(model, init)
        cls = classify_point(blocks)
        mine = np.sort_complex(np.asarray(cls.reduced_spectrum))
        ref = np.sort_complex(_pencil_spectrum(A, B, C, D))
        assert len(mine) == len(ref) == A.shape[0]
        scale = max(1.0, np.abs(ref).max())
        # match each eigenvalue to its nearest counterpart (sorting can split conjugate pairs)
        err = max(np.min(np.abs(ref - z)) for z in mine) / scale
        worst = max(worst, err)
        simulated = _decay_sign(model, A.shape[0], rng)
        if cls.gamma_s_member != (simulated < 0):
            mismatches += 1
        assert np.allclose(reduced_jacobian(blocks), A - B @ np.linalg.solve(D, C), atol=1e-10)
    ok = worst <= 1e-8 and mismatches == 0
    report_line(4, ok, f"worst relative spectrum error {worst:.2e}; classification mismatches {mismatches}/100")
    assert ok


# ------------------------------------------------------------------ 5
def test_criterion_5_singularity(report_line):
    rate = 0.07
    model, init = fold_crossing(rate=rate, z0=0.0)
    cfg = SimConfig(h_q=1.0, horizon=40.0, qss_start_time=0.0)
    traj = simulate_qss(model, init, cfg)
    t_cross = 1.0 / rate
    ok = traj.termination == "singular" and abs(traj.times[-1] - t_cross) <= cfg.h_q
    report_line(5, ok, f"termination {traj.termination} at {traj.times[-1]:.3f} s; analytic crossing "
                       f"{t_cross:.3f} s")
    assert ok


# ------------------------------------------------------------------ 6
def _max_g(model, traj):
    worst = 0.0
    for t, s in zip(traj.times, traj.states):
        _, _, g = model.eval_all(t, s.zc, s.zd, s.x, s.y)
        if g.size:
            worst = max(worst, float(np.max(np.abs(g))))
    return worst


def test_criterion_6_integrator(report_line, success_case, failure_case):
    from qsslab.layout import Layout
    from qsslab.model import FunctionModel
    L = Layout(x=["x"])
    decay = FunctionModel(L, f=lambda t, zc, zd, x, y: -x, jac=lambda t, zc, zd, x, y: np.array([[-1.0]]))

    def err(h):
        traj = simulate_transient(decay, [], [], ([1.0], []), SimConfig(h_t=h, converge_tol=1e-300), horizon=1.0)
        return abs(traj.final.x[0] - np.exp(-1.0))

    ratio = err(0.1) / err(0.05)
    g = max(_max_g(pair.model, tr) for _, pair, _ in (success_case, failure_case) for tr in (pair.lt, pair.qss))
    ok = 3.5 <= ratio <= 4.5 and g <= 1e-8
    report_line(6, ok, f"error ratio {ratio:.4f}; max |g| over scenario samples {g:.2e}")
    assert ok


# ------------------------------------------------------------------ 7
def test_criterion_7_unit_suite(report_line):
    r = subprocess.run([sys.executable, "-m", "pytest", "-m", "example", "-q", "-p", "no:cacheprovider",
                        str(ROOT / "tests")], capture_output=True, text=True, cwd=ROOT)
    summary = r.stdout.strip().splitlines()[-1] if r.stdout.strip() else r.stderr.strip()[-200:]
    ok = r.returncode == 0
    report_line(7, ok, f"pytest -m example: {summary}")
    assert ok, r.stdout[-4000:]


# ------------------------------------------------------------------ 8
def _segment_error(model, lt, cfg):
    cuts = [lt.times[0]] + [e.time for e in lt.events] + [lt.times[-1]]
    worst = 0.0
    for a, b in zip(cuts, cuts[1:]):
        if b - a < cfg.h_l:
            continue
        i = lt.index_at(a)
        ref = simulate_longterm(model, lt.states[i], cfg, t0=lt.times[i], horizon=b, freeze_discrete=True,
                                detect_limit_cycle=False)
        seg = lt.window(a, b)
        # the last sample of a segment is pre-jump in the hybrid run, so compare up to it
        for s1, s2 in zip(seg.states[:-1], ref.states[:len(seg) - 1]):
            worst = max(worst, float(np.max(np.abs(s1.as_vector() - s2.as_vector()))))
    return worst


def test_criterion_8_hybrid_decoupling(report_line, success_case, failure_case):
    errs = [_segment_error(pair.model, pair.lt, sc.sim) for sc, pair, _ in (success_case, failure_case)]
    ok = max(errs) <= 1e-10
    report_line(8, ok, f"max segment deviation success {errs[0]:.2e}, failure {errs[1]:.2e}")
    assert ok
