import math

import numpy as np
import pytest
import scipy.optimize as so
from hypothesis import given, strategies as st

from conftest import load_bus_case, smib
from qsslab.errors import LayoutError, ValidationError
from qsslab.io import load_scenario
from qsslab.kernels import available_backends
from qsslab.layout import Layout, PartitionedState
from qsslab.netmodel import (LtcTimer, eval_algebraic, eval_discrete_update, eval_fast,
                             eval_slow_continuous)
from qsslab.netmodel import devices as dv

BACKENDS = available_backends()


def _two_bus(load_p=0.3, load_q=0.1):
    doc = {"system": {
        "buses": [{"id": 1, "type": "slack", "v": 1.0}, {"id": 2}],
        "branches": [{"id": "l12", "from_bus": 1, "to_bus": 2, "x": 0.1}],
        "load": [{"id": "ld", "bus": 2, "p": load_p, "q": load_q}],
    }}
    return load_scenario(doc).system


# ------------------------------------------------------------------ f
@pytest.mark.example
def test_synchronous_speed_zeroes_angle_rate():
    model, s = smib()
    for delta in (-2.0, 0.3, 3.0):
        f = eval_fast(model, s.replace(**{"g1.delta": delta, "g1.omega": 1.0}))
        assert f[model.layout.locate("g1.delta")[1]] == 0.0


@pytest.mark.example
def test_angle_rate_at_one_percent_overspeed():
    model, s = smib()
    f = eval_fast(model, s.replace(**{"g1.omega": 1.01}))
    assert f[model.layout.locate("g1.delta")[1]] == pytest.approx(2 * math.pi * 60 * 0.01, abs=1e-12)
    assert f[0] == pytest.approx(3.7699111843, abs=1e-9)


@pytest.mark.example
def test_smib_equilibrium_found_by_independent_solver():
    model, s = smib()
    L = model.layout
    nx = len(L.x)

    def resid(u):
        _, f, g = model.eval_all(0.0, s.zc, s.zd, u[:nx], u[nx:])
        return np.concatenate([f, g])

    u0 = np.concatenate([s.x, s.y]) + 1e-3
    sol = so.root(resid, u0, method="hybr", options={"xtol": 1e-14})
    assert sol.success
    f = eval_fast(model, s.replace(x=sol.x[:nx], y=sol.x[nx:]))
    assert np.max(np.abs(f)) < 1e-9
    # the back-substituted initial state is the same equilibrium
    assert np.max(np.abs(sol.x - np.concatenate([s.x, s.y]))) < 1e-8


# ------------------------------------------------------------------ g
@pytest.mark.example
def test_two_bus_flat_start_balance_is_negated_load():
    model = _two_bus(0.3, 0.1)
    L = model.layout
    s = PartitionedState(L, zc=[], zd=[], x=[], y=[1.0, 0.0, 1.0, 0.0])
    g = eval_algebraic(model, s)
    assert g[L.locate("bus2.theta")[1]] == pytest.approx(-0.3, abs=1e-15)
    assert g[L.locate("bus2.v")[1]] == pytest.approx(-0.1, abs=1e-15)


@pytest.mark.example
def test_zero_oxl_output_leaves_reference_residual():
    model, s = load_bus_case()
    s = s.replace(**{"o1.v_oxl": 0.0, "a1.v_ref": 1.234})
    g = eval_algebraic(model, s)
    row = model.layout.locate("a1.v_ref")[1]
    assert g[row] == model.device("a1").v_ref0 - 1.234


def _polar_power_flow(Y, slack, pv, p_spec, q_spec, v_set):
    """Textbook full Newton power flow in polar form with an analytic Jacobian."""
    n = len(v_set)
    pq = [k for k in range(n) if k != slack and k not in pv]
    ang = [k for k in range(n) if k != slack]
    v = np.array(v_set, dtype=float)
    th = np.zeros(n)
    G, B = Y.real, Y.imag
    for _ in range(30):
        P = np.array([v[i] * sum(v[j] * (G[i, j] * np.cos(th[i] - th[j]) + B[i, j] * np.sin(th[i] - th[j]))
                                 for j in range(n)) for i in range(n)])
        Q = np.array([v[i] * sum(v[j] * (G[i, j] * np.sin(th[i] - th[j]) - B[i, j] * np.cos(th[i] - th[j]))
                                 for j in range(n)) for i in range(n)])
        mis = np.concatenate([(p_spec - P)[ang], (q_spec(v) - Q)[pq]])
        if np.max(np.abs(mis)) < 1e-13:
            break
        J = np.zeros((len(mis), len(mis)))
        for a, i in enumerate(ang):
            for b, j in enumerate(ang):
                if i == j:
                    J[a, b] = -Q[i] - B[i, i] * v[i] ** 2
                else:
                    J[a, b] = v[i] * v[j] * (G[i, j] * np.sin(th[i] - th[j]) - B[i, j] * np.cos(th[i] - th[j]))
            for b, j in enumerate(pq):
                if i == j:
                    J[a, len(ang) + b] = P[i] / v[i] + G[i, i] * v[i]
                else:
                    J[a, len(ang) + b] = v[i] * (G[i, j] * np.cos(th[i] - th[j]) + B[i, j] * np.sin(th[i] - th[j]))
        for a, i in enumerate(pq):
            for b, j in enumerate(ang):
                if i == j:
                    J[len(ang) + a, b] = P[i] - G[i, i] * v[i] ** 2
                else:
                    J[len(ang) + a, b] = -v[i] * v[j] * (G[i, j] * np.cos(th[i] - th[j])
                                                         + B[i, j] * np.sin(th[i] - th[j]))
            for b, j in enumerate(pq):
                if i == j:
                    J[len(ang) + a, len(ang) + b] = Q[i] / v[i] - B[i, i] * v[i]
                else:
                    J[len(ang) + a, len(ang) + b] = v[i] * (G[i, j] * np.sin(th[i] - th[j])
                                                            - B[i, j] * np.cos(th[i] - th[j]))
        # the voltage-dependent part of q_spec is omitted from J; constant-power loads only
        dx = np.linalg.solve(J, mis)
        th[ang] += dx[:len(ang)]
        v[pq] += dx[len(ang):]
    return v, th


@pytest.mark.example
def test_solved_power_flow_matches_textbook_newton(success_path):
    sc = load_scenario(success_path)
    model, s = sc.system.initialize()
    g = eval_algebraic(model, s)
    assert np.max(np.abs(g)) < 1e-8

    Y = model.admittance(s.zd)
    buses = [b.id for b in model.network.buses]
    p_spec = np.zeros(len(buses))
    q_load = np.zeros(len(buses))
    p_spec[buses.index(2)] += model.device("g1").p0
    for dev in ("ld", "e1"):
        d = model.device(dev)
        k = buses.index(d.bus)
        p, q = (d.p, d.q) if dev == "ld" else (d.p0, d.q0)
        p_spec[k] -= p
        q_load[k] -= q
    v, th = _polar_power_flow(Y, buses.index(1), [buses.index(2)], p_spec, lambda v: q_load,
                              [b.v for b in model.network.buses])
    for k, b in enumerate(buses):
        assert s[f"bus{b}.v"] == pytest.approx(v[k], abs=1e-9)
        assert s[f"bus{b}.theta"] == pytest.approx(th[k], abs=1e-9)


# ------------------------------------------------------------------ h_c
@pytest.mark.example
def test_erl_at_reference_voltage_has_no_recovery():
    e = dv.ErlModel("e", 1, p_l0=0.7, q_l0=0.2, v0=1.03)
    dxp, dxq = dv.erl_slow(e, 0.0, 0.0, 1.03)
    assert dxp == 0.0 and dxq == 0.0


@pytest.mark.example
def test_oxl_rate_above_limit():
    o = dv.OxlModel("o", "g", t_0=10.0, i_f_lim=1.0, delay=5.0)
    assert dv.oxl_slow(o, 0.3, 1.2, t=6.0) == pytest.approx(0.02, abs=1e-15)
    assert dv.oxl_slow(o, 0.3, 1.2, t=4.0) == 0.0
    assert dv.oxl_slow(o, 0.3, 0.9, t=6.0) == 0.0


@pytest.mark.example
def test_governor_first_lag_at_rest():
    t = dv.TurbineGovernorModel("tg", "g", p_order=0.6)
    p_in = dv.tg_input(t, 1.0, 1.0)
    assert dv.tg_slow(t, p_in, 0.0, 0.0, 1.0, 1.0)[0] == 0.0


def test_slow_rates_vanish_at_initialized_state():
    model, s = load_bus_case()
    assert np.max(np.abs(eval_slow_continuous(model, s, 0.0))) < 1e-12


# ------------------------------------------------------------------ h_d
def _at_voltage(v, m=1.0, **ltc):
    model, s = load_bus_case()
    c = model.ltcs[0]
    params = dict(v0=1.0, d=0.01, dm=0.00625, m_max=1.1, m_min=0.9)
    params.update(ltc)
    from dataclasses import replace
    model = model.replace_device(replace(c, **params))
    s = s.replace(**{"bus3.v": v, "ltc1.m": m})
    return model, s


@pytest.mark.example
def test_tap_raised_above_band():
    model, s = _at_voltage(1.02)
    zd, events, timers = eval_discrete_update(model, s, (LtcTimer(armed_since=0.0),), 20.0)
    assert zd[0] == pytest.approx(1.00625, abs=1e-15)
    assert len(events) == 1 and events[0].old == 1.0 and events[0].new == zd[0]
    assert timers[0].tapped and timers[0].armed_since == 20.0


@pytest.mark.example
def test_tap_unchanged_inside_deadband():
    model, s = _at_voltage(1.005)
    zd, events, timers = eval_discrete_update(model, s, (LtcTimer(armed_since=0.0),), 20.0)
    assert zd[0] == 1.0 and events == []
    assert timers[0] == LtcTimer()


@pytest.mark.example
def test_tap_at_lower_limit_fires_no_event():
    model, s = _at_voltage(0.95, m=0.9)
    zd, events, _ = eval_discrete_update(model, s, (LtcTimer(armed_since=0.0),), 20.0)
    assert zd[0] == 0.9 and events == []


def test_tap_waits_for_first_delay_then_next_delay():
    model, s = _at_voltage(1.02)
    timers = model.init_timers(s, 0.0)
    zd, ev, timers = eval_discrete_update(model, s, timers, 0.0)
    assert ev == [] and timers[0].armed_since == 0.0
    zd, ev, timers = eval_discrete_update(model, s, timers, 19.95)
    assert ev == []
    zd, ev, timers = eval_discrete_update(model, s, timers, 20.0)
    assert len(ev) == 1
    s = s.replace(zd=zd)
    _, ev, _ = eval_discrete_update(model, s, timers, 29.9)
    assert ev == []
    _, ev, _ = eval_discrete_update(model, s, timers, 30.0)
    assert len(ev) == 1


def test_timer_count_mismatch_is_layout_error():
    model, s = load_bus_case()
    with pytest.raises(LayoutError):
        eval_discrete_update(model, s, (), 0.0)


@given(v=st.floats(0.8, 1.2), m=st.floats(0.85, 1.15))
def test_tap_moves_by_one_step_and_stays_in_range(v, m):
    c = dv.LtcModel("c", "b", 1, v0=1.0, d=0.01, dm=0.0125, m_min=0.85, m_max=1.15)
    new = dv.ltc_rule(c, m, v)
    assert new in (m, m + c.dm, m - c.dm)
    if new != m:
        assert c.m_min - 1e-12 <= new <= c.m_max + 1e-12


# ------------------------------------------------------------------ invariants
@pytest.mark.parametrize("backend", BACKENDS)
def test_partition_matches_standalone_device_equations(backend, rng):
    model, s0 = load_bus_case(backend=backend)
    L = model.layout
    for _ in range(5):
        s = s0.replace(x=s0.x + 0.01 * rng.standard_normal(len(L.x)),
                       y=s0.y + 0.01 * rng.standard_normal(len(L.y)),
                       zc=s0.zc + 0.01 * np.abs(rng.standard_normal(len(L.zc))))
        f = eval_fast(model, s)
        g = eval_algebraic(model, s)
        hc = eval_slow_continuous(model, s, 100.0)
        gen, avr, tg = model.device("g1"), model.device("a1"), model.device("tg1")
        oxl, erl = model.device("o1"), model.device("e1")
        v2, th2, v3 = s["bus2.v"], s["bus2.theta"], s["bus3.v"]
        ref = dv.generator_fast(gen, s["g1.delta"], s["g1.omega"], s["g1.e_q_prime"], s["g1.e_d_prime"],
                                s["g1.i_d"], s["g1.i_q"], s["g1.p"], s["g1.p_m"], s["g1.v_f"], v2, th2)
        ref += dv.avr_fast(avr, s["a1.v_m"], s["a1.v_r1"], s["a1.v_r2"], s["a1.v_f"], v2, s["a1.v_ref"])
        np.testing.assert_allclose(f, ref, rtol=0, atol=1e-12)
        ref_g = dv.generator_algebraic(gen, s["g1.delta"], s["g1.e_q_prime"], s["g1.e_d_prime"], s["g1.i_d"],
                                       s["g1.i_q"], s["g1.p"], s["g1.q"], v2, th2)
        np.testing.assert_allclose(g[:4], ref_g, rtol=0, atol=1e-12)
        assert g[L.locate("o1.i_f")[1]] == pytest.approx(
            dv.oxl_field_current(oxl, v2, s["g1.p"], s["g1.q"]) - s["o1.i_f"], abs=1e-12)
        ref_h = dv.tg_slow(tg, s["tg1.x_g1"], s["tg1.x_g2"], s["tg1.x_g3"], s["g1.omega"], s["tg1.omega_ref"])
        ref_h += (dv.oxl_slow(oxl, s["o1.v_oxl"], s["o1.i_f"], 100.0),)
        ref_h += dv.erl_slow(erl, s["e1.x_p"], s["e1.x_q"], v3)
        np.testing.assert_allclose(hc, ref_h, rtol=0, atol=1e-12)


@given(v=st.floats(0.7, 1.3), a_s=st.floats(0.0, 2.0), a_t=st.floats(0.0, 3.0),
       b_s=st.floats(0.0, 2.0), b_t=st.floats(0.0, 3.0))
def test_erl_steady_state_identity(v, a_s, a_t, b_s, b_t):
    e = dv.ErlModel("e", 1, p_l0=0.8, q_l0=0.3, t_p=40.0, t_q=25.0, alpha_s=a_s, alpha_t=a_t,
                    beta_s=b_s, beta_t=b_t, v0=1.02)
    # x_p' = -x_p/T_p + p_s - p_t = 0 solved by hand
    p_s, p_t, q_s, q_t = dv.erl_static_transient(e, v)
    x_p, x_q = e.t_p * (p_s - p_t), e.t_q * (q_s - q_t)
    assert dv.erl_slow(e, x_p, x_q, v) == pytest.approx((0.0, 0.0), abs=1e-12)
    p, q = dv.erl_power(e, x_p, x_q, v)
    assert p == pytest.approx(0.8 * (v / 1.02) ** a_s, rel=1e-12)
    assert q == pytest.approx(0.3 * (v / 1.02) ** b_s, rel=1e-12)


@given(p_in=st.floats(0.0, 1.5), t_3=st.floats(0.0, 0.3), t_4=st.floats(0.0, 5.0),
       t_5=st.floats(0.5, 20.0))
def test_governor_static_gain_is_one(p_in, t_3, t_4, t_5):
    t = dv.TurbineGovernorModel("tg", "g", t_3=t_3, t_4=t_4, t_5=t_5, p_order=p_in)
    sol = so.root(lambda u: dv.tg_slow(t, *u, 1.0, 1.0), np.zeros(3), tol=1e-14)
    assert sol.success
    assert dv.tg_power(t, *sol.x) == pytest.approx(p_in, abs=1e-10)


@given(v_r1=st.floats(-50.0, 50.0), lo=st.floats(-10.0, -0.1), hi=st.floats(0.1, 10.0))
def test_avr_output_is_clamped(v_r1, lo, hi):
    a = dv.AvrModel("a", "g", v_r_min=lo, v_r_max=hi)
    assert dv.avr_regulator_output(a, v_r1) == min(max(v_r1, lo), hi)


@given(v_oxl=st.floats(0.0, 1.0), i_f=st.floats(0.0, 3.0))
def test_oxl_cannot_wind_below_zero(v_oxl, i_f):
    o = dv.OxlModel("o", "g", i_f_lim=1.5)
    rate = dv.oxl_slow(o, v_oxl, i_f, 10.0)
    if v_oxl <= 0.0:
        assert rate >= 0.0
    if i_f <= 1.5:
        assert rate == 0.0


@pytest.mark.parametrize("backend", BACKENDS)
def test_evaluation_is_pure(backend, rng):
    model, s = load_bus_case(backend=backend)
    s = s.replace(x=s.x + 0.01 * rng.standard_normal(s.x.size))
    a = [eval_fast(model, s), eval_algebraic(model, s), eval_slow_continuous(model, s, 3.0)]
    b = [eval_fast(model, s), eval_algebraic(model, s), eval_slow_continuous(model, s, 3.0)]
    for u, w in zip(a, b):
        assert u.tobytes() == w.tobytes()


def test_state_from_another_layout_is_rejected():
    model, _ = smib()
    other = PartitionedState.zeros(Layout(x=["a"], y=["b"]))
    with pytest.raises(LayoutError):
        eval_fast(model, other)


def test_table_partition():
    model, _ = load_bus_case()
    L = model.layout
    assert L.locate("o1.v_oxl")[0] == "zc"
    assert L.locate("e1.x_p")[0] == "zc"
    assert L.locate("tg1.x_g3")[0] == "zc"
    assert L.locate("ltc1.m")[0] == "zd"
    assert L.locate("a1.v_f")[0] == "x"
    assert L.locate("g1.omega")[0] == "x"
    for name in ("g1.p_m", "g1.v_f", "tg1.omega_ref", "o1.i_f", "a1.v_ref", "bus3.v"):
        assert L.locate(name)[0] == "y"


@pytest.mark.parametrize("bad", [
    {"ltc": [{"id": "c", "branch": "l12", "bus": 2, "m_min": 1.1, "m_max": 0.9}]},
    {"oxl": [{"id": "o", "gen": "g1", "t_0": 0.0}]},
    {"erl": [{"id": "e", "bus": 2, "t_p": -1.0}]},
    {"tg": [{"id": "tg1", "gen": "nope"}]},
])
def test_invalid_device_parameters(bad):
    from conftest import smib_doc
    with pytest.raises(ValidationError):
        load_scenario(smib_doc(**bad))


def test_initialization_rejects_regulator_beyond_limits():
    with pytest.raises(ValidationError):
        smib(avr=[{"id": "a1", "gen": "g1", "v_r_max": 0.5, "v_r_min": -0.5}])
