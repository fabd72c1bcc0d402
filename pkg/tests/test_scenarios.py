"""Whole-scenario runs: the generator/LTC/load-restoration case that the QSS
model should track, and the OXL/LTC case where it should not."""
import numpy as np
import pytest

from qsslab.algebra import classify_point, jacobian_blocks
from qsslab.checker import compare_omega_limits, compare_trajectories, diagnose
from qsslab.io import load_scenario

pytestmark = pytest.mark.slow


# ------------------------------------------------------------------ success
@pytest.mark.example
def test_success_qss_converges(success_case):
    _, pair, _ = success_case
    assert pair.qss.termination == "converged"
    assert pair.lt.termination == "converged"


@pytest.mark.example
def test_success_verdict(success_case):
    sc, pair, report = success_case
    assert report.overall == "QSS-valid"
    assert report.trajectory_gap["sup_slow"] <= sc.delta
    assert report.omega_limit["verdict"] == "same-SEP"


@pytest.mark.example
def test_success_moves_along_gamma_s(success_case):
    _, pair, report = success_case
    assert report.gamma_s_along_qss["status"] == "pass"
    # independent per-sample eigen check
    for t, s in zip(pair.qss.times, pair.qss.states):
        J = jacobian_blocks(pair.model, s, t)
        red = J.D_xf - J.D_yf @ np.linalg.solve(J.D_yg, J.D_xg)
        assert np.max(np.linalg.eigvals(red).real) < 0


@pytest.mark.example
def test_success_initial_point_is_attracted(success_case):
    _, _, report = success_case
    assert report.initial_attraction["status"] == "pass"


@pytest.mark.example
def test_success_every_event_inside(success_case):
    _, pair, report = success_case
    assert len(report.consistent_attraction) >= 1
    assert all(e["answer"] == "inside" for e in report.consistent_attraction)


def test_success_checks_hold_for_the_qss_classes(success_case):
    _, pair, _ = success_case
    for c, t, s in zip(pair.qss.classes, pair.qss.times, pair.qss.states):
        assert c == classify_point(jacobian_blocks(pair.model, s, t))


# ------------------------------------------------------------------ failure
@pytest.mark.example
def test_failure_long_term_run_loses_the_equilibrium(failure_case):
    _, pair, _ = failure_case
    assert pair.qss.termination == "converged"
    assert pair.lt.termination in ("limit-cycle", "diverged")


@pytest.mark.example
def test_failure_verdict(failure_case):
    _, pair, report = failure_case
    assert report.overall == "QSS-invalid: consistent-attraction"
    assert any(e["answer"] == "outside" for e in report.consistent_attraction)
    om = compare_omega_limits(pair.lt, pair.qss)
    assert om.mismatch and om.verdict in ("LT-limit-cycle", "LT-diverged")


@pytest.mark.example
def test_failure_gap_grows_after_the_flagged_event(failure_case):
    _, pair, report = failure_case
    t_out = next(e["time"] for e in report.consistent_attraction if e["answer"] == "outside")
    m = compare_trajectories(pair.lt, pair.qss)
    before = m.slow_gap[m.times <= t_out]
    after = m.slow_gap[m.times > t_out]
    assert after.max() > 10 * before[-1]


def test_failure_outside_event_precedes_blowup(failure_case):
    sc, pair, report = failure_case
    t_out = next(e["time"] for e in report.consistent_attraction if e["answer"] == "outside")
    blow = report.trajectory_gap["blowup_time"]
    assert blow is not None and t_out < blow


def test_report_is_reproducible(success_path, success_case):
    _, _, report = success_case
    again = diagnose(None, load_scenario(success_path))
    assert again.to_dict() == report.to_dict()
