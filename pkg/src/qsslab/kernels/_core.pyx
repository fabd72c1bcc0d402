# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled residual, Jacobian and trapezoid-step kernels.

Mirrors :mod:`qsslab.kernels._core_py` and :mod:`qsslab.sim.stepper`
operation for operation; parity is covered by the test suite.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, exp, sqrt, pow, fabs, isfinite
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_lapack cimport dgetrf, dgetrs

from ..errors import NoConvergence, SingularJacobian, NonFiniteEntry

cnp.import_array()

# parameter column layouts
DEF G_OMB = 0
DEF G_M = 1
DEF G_D = 2
DEF G_XD = 3
DEF G_XDP = 4
DEF G_XQ = 5
DEF G_XQP = 6
DEF G_RA = 7
DEF G_TD0 = 8
DEF G_TQ0 = 9
DEF G_KOM = 10
DEF G_KP = 11
DEF G_SA = 12
DEF G_SB = 13
DEF G_PM0 = 14
DEF G_VF0 = 15
DEF G_P0 = 16

DEF A_KA = 0
DEF A_TA = 1
DEF A_KF = 2
DEF A_TF = 3
DEF A_KE = 4
DEF A_TE = 5
DEF A_TR = 6
DEF A_AE = 7
DEF A_BE = 8
DEF A_VMAX = 9
DEF A_VMIN = 10
DEF A_VREF0 = 11

DEF T_R = 0
DEF T_PMAX = 1
DEF T_PMIN = 2
DEF T_TS = 3
DEF T_TC = 4
DEF T_T3 = 5
DEF T_T4 = 6
DEF T_T5 = 7
DEF T_WREF0 = 8
DEF T_PORD = 9

DEF O_T0 = 0
DEF O_LIM = 1
DEF O_DELAY = 2
DEF O_XD = 3
DEF O_XQ = 4

DEF E_P0 = 0
DEF E_Q0 = 1
DEF E_TP = 2
DEF E_TQ = 3
DEF E_AS = 4
DEF E_AT = 5
DEF E_BS = 6
DEF E_BT = 7
DEF E_V0 = 8

DEF L_P = 0
DEF L_Q = 1
DEF L_A = 2
DEF L_B = 3
DEF L_V0 = 4

DEF PIVOT_TOL = 1e-12


def _pack(model):
    gp = np.array([[g.omega_b, g.m, g.d, g.x_d, g.x_d_prime, g.x_q, g.x_q_prime, g.r_a,
                    g.t_d0_prime, g.t_q0_prime, g.k_omega, g.k_p, g.sat_a, g.sat_b,
                    g.p_m0, g.v_f0, g.p0] for g in model.gens], dtype=float).reshape(-1, 17)
    ap = np.array([[a.k_a, a.t_a, a.k_f, a.t_f, a.k_e, a.t_e, a.t_r, a.a_e, a.b_e,
                    a.v_r_max, a.v_r_min, a.v_ref0] for a in model.avrs], dtype=float).reshape(-1, 12)
    tp = np.array([[t.r, t.p_max, t.p_min, t.t_s, t.t_c, t.t_3, t.t_4, t.t_5,
                    t.omega_ref0, t.p_order] for t in model.tgs], dtype=float).reshape(-1, 10)
    op = np.array([[o.t_0, o.i_f_lim, o.delay, o.x_d, o.x_q] for o in model.oxls],
                  dtype=float).reshape(-1, 5)
    ep = np.array([[e.p0, e.q0, e.t_p, e.t_q, e.alpha_s, e.alpha_t, e.beta_s, e.beta_t,
                    e.v0 if e.v0 is not None else 1.0] for e in model.erls],
                  dtype=float).reshape(-1, 9)
    lp = np.array([[l.p, l.q, l.alpha, l.beta, l.v0] for l in model.loads],
                  dtype=float).reshape(-1, 5)
    return gp, ap, tp, op, ep, lp


def _ints(a):
    return np.ascontiguousarray(np.asarray(a, dtype=np.intp).reshape(-1))


cdef class CKernel:
    """Residuals of a :class:`~qsslab.netmodel.SystemModel` in C."""

    cdef public object model
    cdef public str backend
    cdef public int nzc, nzd, nx, ny, n, nbus
    cdef int ngen, navr, ntg, noxl, nerl, nload, nltc
    cdef double[:, ::1] gp, ap, tp, op, ep, lp
    cdef Py_ssize_t[::1] gen_bus, gen_ix, gen_iy, gen_avr, gen_tg
    cdef Py_ssize_t[::1] avr_gen, avr_ix, avr_iy, avr_oxl
    cdef Py_ssize_t[::1] tg_gen, tg_iz, tg_iy
    cdef Py_ssize_t[::1] oxl_gen, oxl_iz, oxl_iy
    cdef Py_ssize_t[::1] erl_bus, erl_iz, erl_iy, load_bus
    cdef Py_ssize_t[::1] bus_iv, bus_ith, bus_slack
    cdef double[::1] bus_vset, bus_thset
    cdef double[:, ::1] G0, B0
    cdef Py_ssize_t[::1] ltc_from, ltc_to
    cdef double[::1] ltc_g, ltc_b, ltc_bsh
    cdef Py_ssize_t[::1] ex_ptr, ex_row, ex_col
    cdef double[::1] ex_val
    cdef double[:, ::1] Gw, Bw
    cdef double[::1] P, Q, work_p, work_m

    def __init__(self, model):
        self.model = model
        self.backend = "compiled"
        L = model.layout
        self.nzc, self.nzd, self.nx, self.ny = len(L.zc), len(L.zd), len(L.x), len(L.y)
        self.n = self.nzc + self.nx + self.ny
        self.nbus = model.network.n_bus
        self.ngen, self.navr, self.ntg = len(model.gens), len(model.avrs), len(model.tgs)
        self.noxl, self.nerl, self.nload = len(model.oxls), len(model.erls), len(model.loads)
        self.nltc = len(model.ltcs)
        self.gp, self.ap, self.tp, self.op, self.ep, self.lp = _pack(model)
        self.gen_bus, self.gen_ix, self.gen_iy = _ints(model.gen_bus), _ints(model.gen_ix), _ints(model.gen_iy)
        self.gen_avr, self.gen_tg = _ints(model.gen_avr), _ints(model.gen_tg)
        self.avr_gen, self.avr_ix, self.avr_iy = _ints(model.avr_gen), _ints(model.avr_ix), _ints(model.avr_iy)
        self.avr_oxl = _ints(model.avr_oxl)
        self.tg_gen, self.tg_iz, self.tg_iy = _ints(model.tg_gen), _ints(model.tg_iz), _ints(model.tg_iy)
        self.oxl_gen, self.oxl_iz, self.oxl_iy = _ints(model.oxl_gen), _ints(model.oxl_iz), _ints(model.oxl_iy)
        self.erl_bus, self.erl_iz, self.erl_iy = _ints(model.erl_bus), _ints(model.erl_iz), _ints(model.erl_iy)
        self.load_bus = _ints(model.load_bus)
        self.bus_iv, self.bus_ith, self.bus_slack = _ints(model.bus_iv), _ints(model.bus_ith), _ints(model.bus_slack)
        self.bus_vset = np.ascontiguousarray(model.bus_vset, dtype=float)
        self.bus_thset = np.ascontiguousarray(model.bus_thset, dtype=float)
        self.G0 = np.ascontiguousarray(model.Y0.real)
        self.B0 = np.ascontiguousarray(model.Y0.imag)
        self.ltc_from, self.ltc_to = _ints(model.ltc_from), _ints(model.ltc_to)
        self.ltc_g = np.ascontiguousarray(model.ltc_ys.real, dtype=float).reshape(-1)
        self.ltc_b = np.ascontiguousarray(model.ltc_ys.imag, dtype=float).reshape(-1)
        self.ltc_bsh = np.ascontiguousarray(model.ltc_ysh, dtype=float).reshape(-1)
        rows = sorted(model.exact_rows.items())
        ptr, rr, cc, vv = [0], [], [], []
        for row, entries in rows:
            rr.append(row)
            for col, val in entries:
                cc.append(col)
                vv.append(val)
            ptr.append(len(cc))
        self.ex_ptr, self.ex_row, self.ex_col = _ints(ptr), _ints(rr), _ints(cc)
        self.ex_val = np.ascontiguousarray(vv, dtype=float)
        self.Gw = np.zeros((self.nbus, self.nbus))
        self.Bw = np.zeros((self.nbus, self.nbus))
        self.P = np.zeros(self.nbus)
        self.Q = np.zeros(self.nbus)
        self.work_p = np.zeros(self.n)
        self.work_m = np.zeros(self.n)

    # ------------------------------------------------------------ residual
    cdef void _eval(self, double t, const double* zc, const double* zd, const double* x,
                    const double* y, double* out) noexcept nogil:
        """Stacked (h_c, f, g) into ``out``."""
        cdef double* hc = out
        cdef double* f = out + self.nzc
        cdef double* g = out + self.nzc + self.nx
        cdef Py_ssize_t i, j, k, b, ix, iy, iz, ia, it, io, kg, fr, to
        cdef double m, gs, bs, bsh, m2, v, th, vi, vj, dth, c, s, Pn, Qn
        cdef double delta, omega, e_q, e_d, i_d, i_q, p, q, p_m, v_f, v_d, v_q, p_e, v_fs, fs
        cdef double v_m, v_r1, v_r2, v_af, v_ref, kf, v_r, ceil_
        cdef double a3, p_star, x1, x2, x3, gp_, gq_, e, i_f, rate, r, p_s, p_t, q_s, q_t
        cdef int nb = self.nbus

        for i in range(nb):
            for j in range(nb):
                self.Gw[i, j] = self.G0[i, j]
                self.Bw[i, j] = self.B0[i, j]
            self.P[i] = 0.0
            self.Q[i] = 0.0
        for k in range(self.nltc):
            m = zd[k]
            fr = self.ltc_from[k]
            to = self.ltc_to[k]
            gs = self.ltc_g[k]
            bs = self.ltc_b[k]
            bsh = self.ltc_bsh[k]
            m2 = m * m
            self.Gw[fr, fr] += gs / m2
            self.Bw[fr, fr] += (bs + bsh) / m2
            self.Gw[fr, to] -= gs / m
            self.Bw[fr, to] -= bs / m
            self.Gw[to, fr] -= gs / m
            self.Bw[to, fr] -= bs / m
            self.Gw[to, to] += gs
            self.Bw[to, to] += bs + bsh

        # generators
        for k in range(self.ngen):
            b = self.gen_bus[k]
            ix = self.gen_ix[k]
            iy = self.gen_iy[k]
            v = y[self.bus_iv[b]]
            th = y[self.bus_ith[b]]
            delta = x[ix]
            omega = x[ix + 1]
            e_q = x[ix + 2]
            e_d = x[ix + 3]
            i_d = y[iy]
            i_q = y[iy + 1]
            p = y[iy + 2]
            q = y[iy + 3]
            p_m = y[iy + 4]
            v_f = y[iy + 5]
            v_d = v * sin(delta - th)
            v_q = v * cos(delta - th)
            p_e = (v_q + self.gp[k, G_RA] * i_q) * i_q + (v_d + self.gp[k, G_RA] * i_d) * i_d
            v_fs = v_f + self.gp[k, G_KOM] * (omega - 1.0) - self.gp[k, G_KP] * (p - self.gp[k, G_P0])
            if self.gp[k, G_SA] == 0.0:
                fs = e_q
            else:
                fs = e_q + self.gp[k, G_SA] * exp(self.gp[k, G_SB] * e_q)
            f[ix] = self.gp[k, G_OMB] * (omega - 1.0)
            f[ix + 1] = (p_m - p_e - self.gp[k, G_D] * (omega - 1.0)) / self.gp[k, G_M]
            f[ix + 2] = (-fs - (self.gp[k, G_XD] - self.gp[k, G_XDP]) * i_d + v_fs) / self.gp[k, G_TD0]
            f[ix + 3] = (-e_d + (self.gp[k, G_XQ] - self.gp[k, G_XQP]) * i_q) / self.gp[k, G_TQ0]
            g[iy] = v_d + self.gp[k, G_RA] * i_d - e_d - self.gp[k, G_XQP] * i_q
            g[iy + 1] = v_q + self.gp[k, G_RA] * i_q - e_q + self.gp[k, G_XDP] * i_d
            g[iy + 2] = v_d * i_d + v_q * i_q - p
            g[iy + 3] = v_q * i_d - v_d * i_q - q
            it = self.gen_tg[k]
            if it >= 0:
                iz = self.tg_iz[it]
                g[iy + 4] = (zc[iz + 2] + self.tp[it, T_T4] / self.tp[it, T_T5]
                             * (zc[iz + 1] + self.tp[it, T_T3] / self.tp[it, T_TC] * zc[iz])) - p_m
            else:
                g[iy + 4] = self.gp[k, G_PM0] - p_m
            ia = self.gen_avr[k]
            if ia >= 0:
                g[iy + 5] = x[self.avr_ix[ia] + 3] - v_f
            else:
                g[iy + 5] = self.gp[k, G_VF0] - v_f
            self.P[b] += p
            self.Q[b] += q

        # exciters
        for k in range(self.navr):
            b = self.gen_bus[self.avr_gen[k]]
            ix = self.avr_ix[k]
            iy = self.avr_iy[k]
            v = y[self.bus_iv[b]]
            v_ref = y[iy]
            v_m = x[ix]
            v_r1 = x[ix + 1]
            v_r2 = x[ix + 2]
            v_af = x[ix + 3]
            kf = self.ap[k, A_KF] / self.ap[k, A_TF]
            v_r = v_r1
            if v_r < self.ap[k, A_VMIN]:
                v_r = self.ap[k, A_VMIN]
            if v_r > self.ap[k, A_VMAX]:
                v_r = self.ap[k, A_VMAX]
            ceil_ = self.ap[k, A_AE] * exp(self.ap[k, A_BE] * fabs(v_af))
            f[ix] = (v - v_m) / self.ap[k, A_TR]
            f[ix + 1] = (self.ap[k, A_KA] * (v_ref - v_m - v_r2 - kf * v_af) - v_r1) / self.ap[k, A_TA]
            f[ix + 2] = -(kf * v_af + v_r2) / self.ap[k, A_TF]
            f[ix + 3] = -(v_af * (self.ap[k, A_KE] + ceil_) - v_r) / self.ap[k, A_TE]
            io = self.avr_oxl[k]
            if io >= 0:
                g[iy] = self.ap[k, A_VREF0] - v_ref - zc[self.oxl_iz[io]]
            else:
                g[iy] = self.ap[k, A_VREF0] - v_ref - 0.0

        # turbine governors
        for k in range(self.ntg):
            iz = self.tg_iz[k]
            iy = self.tg_iy[k]
            omega = x[self.gen_ix[self.tg_gen[k]] + 1]
            p_star = self.tp[k, T_PORD] + (y[iy] - omega) / self.tp[k, T_R]
            if p_star < self.tp[k, T_PMIN]:
                p_star = self.tp[k, T_PMIN]
            if p_star > self.tp[k, T_PMAX]:
                p_star = self.tp[k, T_PMAX]
            a3 = self.tp[k, T_T3] / self.tp[k, T_TC]
            x1 = zc[iz]
            x2 = zc[iz + 1]
            x3 = zc[iz + 2]
            hc[iz] = (p_star - x1) / self.tp[k, T_TS]
            hc[iz + 1] = ((1.0 - a3) * x1 - x2) / self.tp[k, T_TC]
            hc[iz + 2] = ((1.0 - self.tp[k, T_T4] / self.tp[k, T_T5]) * (x2 + a3 * x1) - x3) / self.tp[k, T_T5]
            g[iy] = self.tp[k, T_WREF0] - y[iy]

        # over-excitation limiters
        for k in range(self.noxl):
            kg = self.oxl_gen[k]
            b = self.gen_bus[kg]
            iy = self.oxl_iy[k]
            iz = self.oxl_iz[k]
            v = y[self.bus_iv[b]]
            p = y[self.gen_iy[kg] + 2]
            q = y[self.gen_iy[kg] + 3]
            gp_ = self.op[k, O_XQ] * p / v
            gq_ = self.op[k, O_XQ] * q / v
            e = sqrt((v + gq_) * (v + gq_) + gp_ * gp_)
            i_f = e + (self.op[k, O_XD] / self.op[k, O_XQ] - 1.0) * (gq_ * (v + gq_) + gp_ * gp_) / e
            g[iy] = i_f - y[iy]
            i_f = y[iy]
            if t < self.op[k, O_DELAY] or i_f <= self.op[k, O_LIM]:
                hc[iz] = 0.0
            else:
                rate = (i_f - self.op[k, O_LIM]) / self.op[k, O_T0]
                if zc[iz] <= 0.0 and rate < 0.0:
                    hc[iz] = 0.0
                else:
                    hc[iz] = rate

        # exponential recovery loads
        for k in range(self.nerl):
            b = self.erl_bus[k]
            iz = self.erl_iz[k]
            iy = self.erl_iy[k]
            v = y[self.bus_iv[b]]
            r = v / self.ep[k, E_V0]
            p_s = self.ep[k, E_P0] * pow(r, self.ep[k, E_AS])
            p_t = self.ep[k, E_P0] * pow(r, self.ep[k, E_AT])
            q_s = self.ep[k, E_Q0] * pow(r, self.ep[k, E_BS])
            q_t = self.ep[k, E_Q0] * pow(r, self.ep[k, E_BT])
            hc[iz] = -zc[iz] / self.ep[k, E_TP] + p_s - p_t
            hc[iz + 1] = -zc[iz + 1] / self.ep[k, E_TQ] + q_s - q_t
            g[iy] = (zc[iz] / self.ep[k, E_TP] + p_t) - y[iy]
            g[iy + 1] = (zc[iz + 1] / self.ep[k, E_TQ] + q_t) - y[iy + 1]
            self.P[b] -= y[iy]
            self.Q[b] -= y[iy + 1]

        # static loads
        for k in range(self.nload):
            b = self.load_bus[k]
            v = y[self.bus_iv[b]]
            r = v / self.lp[k, L_V0]
            self.P[b] -= self.lp[k, L_P] * pow(r, self.lp[k, L_A])
            self.Q[b] -= self.lp[k, L_Q] * pow(r, self.lp[k, L_B])

        # network balance
        for i in range(nb):
            vi = y[self.bus_iv[i]]
            if self.bus_slack[i]:
                g[self.bus_ith[i]] = y[self.bus_ith[i]] - self.bus_thset[i]
                g[self.bus_iv[i]] = vi - self.bus_vset[i]
                continue
            Pn = 0.0
            Qn = 0.0
            for j in range(nb):
                if self.Gw[i, j] == 0.0 and self.Bw[i, j] == 0.0:
                    continue
                vj = y[self.bus_iv[j]]
                dth = y[self.bus_ith[i]] - y[self.bus_ith[j]]
                c = cos(dth)
                s = sin(dth)
                Pn += vj * (self.Gw[i, j] * c + self.Bw[i, j] * s)
                Qn += vj * (self.Gw[i, j] * s - self.Bw[i, j] * c)
            g[self.bus_ith[i]] = self.P[i] - vi * Pn
            g[self.bus_iv[i]] = self.Q[i] - vi * Qn

    cdef void _eval_u(self, double t, const double* u, const double* zd, double* out) noexcept nogil:
        self._eval(t, u, zd, u + self.nzc, u + self.nzc + self.nx, out)

    cdef int _jacobian(self, double t, double* u, const double* zd, double* J) noexcept nogil:
        """FD Jacobian (row-major n x n) with exact rows applied; returns -1 on non-finite."""
        cdef int n = self.n
        cdef Py_ssize_t i, j, r, p
        cdef double uj, hj, up, um, den
        cdef double* rp = &self.work_p[0]
        cdef double* rm = &self.work_m[0]
        for j in range(n):
            uj = u[j]
            hj = fabs(uj) * 1e-6
            if hj < 1e-6:
                hj = 1e-6
            up = uj + hj
            um = uj - hj
            u[j] = up
            self._eval_u(t, u, zd, rp)
            u[j] = um
            self._eval_u(t, u, zd, rm)
            u[j] = uj
            den = up - um
            for i in range(n):
                J[i * n + j] = (rp[i] - rm[i]) / den
        for i in range(n * n):
            if not isfinite(J[i]):
                return -1
        for r in range(self.ex_row.shape[0]):
            i = self.ex_row[r]
            for j in range(n):
                J[i * n + j] = 0.0
            for p in range(self.ex_ptr[r], self.ex_ptr[r + 1]):
                J[i * n + self.ex_col[p]] = self.ex_val[p]
        return 0

    # ------------------------------------------------------------- Python API
    def residual(self, double t, zc, zd, x, y):
        cdef const double[::1] zc_ = np.ascontiguousarray(zc, dtype=float)
        cdef const double[::1] zd_ = np.ascontiguousarray(zd, dtype=float)
        cdef const double[::1] x_ = np.ascontiguousarray(x, dtype=float)
        cdef const double[::1] y_ = np.ascontiguousarray(y, dtype=float)
        out = np.empty(self.n)
        cdef double[::1] o = out
        cdef double dummy = 0.0
        self._eval(t, &zc_[0] if self.nzc else &dummy, &zd_[0] if self.nzd else &dummy,
                   &x_[0] if self.nx else &dummy, &y_[0] if self.ny else &dummy, &o[0])
        return out[:self.nzc], out[self.nzc:self.nzc + self.nx], out[self.nzc + self.nx:]

    def jacobian(self, double t, zc, zd, x, y):
        u = np.ascontiguousarray(np.concatenate([zc, x, y]), dtype=float)
        cdef double[::1] u_ = u
        cdef const double[::1] zd_ = np.ascontiguousarray(zd, dtype=float)
        J = np.empty((self.n, self.n))
        cdef double[:, ::1] J_ = J
        cdef double dummy = 0.0
        if self._jacobian(t, &u_[0], &zd_[0] if self.nzd else &dummy, &J_[0, 0]) != 0:
            raise NonFiniteEntry("finite-difference Jacobian has non-finite entries")
        return J

    def make_stepper(self, model, mode, eps, tol):
        return CStepper(self, mode, eps, tol)


cdef class CStepper:
    """Compiled counterpart of :class:`qsslab.sim.stepper.PyStepper`."""

    cdef CKernel k
    cdef public str mode
    cdef public str backend
    cdef public double eps, tol, alg_tol
    cdef public int max_iter, jacobian_count
    cdef public object last_eval
    cdef int slow, qss, nzc, nx, ny, ns, n, nfull
    cdef bint have_lu, have_cache
    cdef double lu_h, cache_t
    cdef double[::1] lu, Jfull, r, u, u0, full, out, hc_n, f_n, cache_u, cache_zd, zd_buf
    cdef int[::1] ipiv

    def __init__(self, CKernel kernel, mode, eps=1.0, tol=1e-8, alg_tol=1e-10, max_iter=10):
        if mode not in ("transient", "longterm", "qss"):
            raise ValueError("mode must be one of ('transient', 'longterm', 'qss')")
        if not eps > 0:
            raise ValueError("eps must be > 0")
        self.k = kernel
        self.backend = "compiled"
        self.mode = mode
        self.eps = eps
        self.tol = tol
        self.alg_tol = alg_tol
        self.max_iter = max_iter
        self.jacobian_count = 0
        self.slow = mode != "transient"
        self.qss = mode == "qss"
        self.nzc, self.nx, self.ny = kernel.nzc, kernel.nx, kernel.ny
        self.ns = self.nzc if self.slow else 0
        self.n = self.ns + self.nx + self.ny
        self.nfull = kernel.n
        self.lu = np.zeros(max(self.n * self.n, 1))
        self.Jfull = np.zeros(max(self.nfull * self.nfull, 1))
        self.r = np.zeros(max(self.n, 1))
        self.u = np.zeros(max(self.n, 1))
        self.u0 = np.zeros(max(self.n, 1))
        self.full = np.zeros(max(self.nfull, 1))
        self.out = np.zeros(max(self.nfull, 1))
        self.hc_n = np.zeros(max(self.nzc, 1))
        self.f_n = np.zeros(max(self.nx, 1))
        self.cache_u = np.zeros(max(self.nfull, 1))
        self.cache_zd = np.zeros(max(kernel.nzd, 1))
        self.zd_buf = np.zeros(max(kernel.nzd, 1))
        self.ipiv = np.zeros(max(self.n, 1), dtype=np.intc)
        self.last_eval = None
        self.invalidate()

    def invalidate(self):
        self.have_lu = False
        self.have_cache = False

    cdef void _expand(self, const double* u, const double* zc_frozen) noexcept nogil:
        """Full (zc, x, y) vector from the unknowns."""
        cdef Py_ssize_t i
        if self.slow:
            for i in range(self.nfull):
                self.full[i] = u[i]
        else:
            for i in range(self.nzc):
                self.full[i] = zc_frozen[i]
            for i in range(self.nx + self.ny):
                self.full[self.nzc + i] = u[i]

    cdef double _residual(self, double t1, double h, const double* u, const double* zd,
                          const double* zc_n, const double* x_n, double* ok) noexcept nogil:
        """Step residual into self.r; returns its max-norm and sets ok[0] to convergence."""
        cdef Py_ssize_t i
        cdef int ns = self.ns, nx = self.nx, nzc = self.nzc
        cdef double a, nr = 0.0, nd = 0.0, ng = 0.0
        self._expand(u, zc_n)
        self.k._eval_u(t1, &self.full[0], zd, &self.out[0])
        if self.slow:
            for i in range(ns):
                self.r[i] = u[i] - zc_n[i] - 0.5 * h * (self.out[i] + self.hc_n[i])
        for i in range(nx):
            if self.qss:
                self.r[ns + i] = self.out[nzc + i]
            else:
                self.r[ns + i] = u[ns + i] - x_n[i] - 0.5 * h / self.eps * (self.out[nzc + i] + self.f_n[i])
        for i in range(self.ny):
            self.r[ns + nx + i] = self.out[nzc + nx + i]
        for i in range(self.n):
            a = fabs(self.r[i])
            if not isfinite(a):
                ok[0] = 0.0
                return a
            if i < ns + nx:
                if a > nd:
                    nd = a
            elif a > ng:
                ng = a
        nr = nd if nd > ng else ng
        ok[0] = 1.0 if (nd <= self.tol and ng <= self.alg_tol) else 0.0
        return nr

    cdef int _factor(self, double t1, double h, const double* zd, const double* zc_frozen) noexcept nogil:
        """Build and LU-factor the Newton matrix at self.u0; 0 ok, -1 non-finite, -2 singular."""
        cdef int n = self.n, nf = self.nfull, ns = self.ns, nx = self.nx, nzc = self.nzc
        cdef int off = 0 if self.slow else nzc
        cdef Py_ssize_t i, j
        cdef double a, coef
        cdef int info = 0
        self._expand(&self.u0[0], zc_frozen)
        if self.k._jacobian(t1, &self.full[0], zd, &self.Jfull[0]) != 0:
            return -1
        # Newton matrix A (row-major) stored column-major for LAPACK: lu[j*n + i] = A[i, j]
        for i in range(n):
            for j in range(n):
                a = self.Jfull[(i + off) * nf + (j + off)]
                if i < ns:
                    a = -0.5 * h * a
                    if i == j:
                        a += 1.0
                elif i < ns + nx:
                    if not self.qss:
                        a = -0.5 * h / self.eps * a
                        if i == j:
                            a += 1.0
                self.lu[j * n + i] = a
        if n == 0:
            return 0
        dgetrf(&n, &n, &self.lu[0], &n, &self.ipiv[0], &info)
        if info < 0:
            return -1
        for i in range(n):
            a = fabs(self.lu[i * n + i])
            if not isfinite(a):
                return -1
            if a < PIVOT_TOL:
                return -2
        return 0

    cdef void _solve(self) noexcept nogil:
        cdef int n = self.n, one = 1, info = 0
        cdef char trans = b'N'
        if n == 0:
            return
        dgetrs(&trans, &n, &one, &self.lu[0], &n, &self.ipiv[0], &self.r[0], &n, &info)

    def step(self, double t, double h, zc, zd, x, y):
        cdef const double[::1] zc_ = np.ascontiguousarray(zc, dtype=float)
        cdef const double[::1] zd_ = np.ascontiguousarray(zd, dtype=float)
        cdef const double[::1] x_ = np.ascontiguousarray(x, dtype=float)
        cdef const double[::1] y_ = np.ascontiguousarray(y, dtype=float)
        cdef int nzc = self.nzc, nx = self.nx, ny = self.ny, ns = self.ns, n = self.n
        cdef int nzd = zd_.shape[0]
        cdef Py_ssize_t i, it
        cdef double t1 = t + h, nr = 0.0, n_new, okv = 0.0
        cdef bint same, fresh, ok
        cdef int attempt, status
        cdef double dummy = 0.0
        cdef const double* zcp = &zc_[0] if nzc else &dummy
        cdef const double* zdp = &zd_[0] if nzd else &dummy
        cdef const double* xp = &x_[0] if nx else &dummy

        # values at the start of the step
        same = self.have_cache and self.cache_t == t
        if same:
            for i in range(nzc):
                same = same and self.cache_u[i] == zc_[i]
            for i in range(nx):
                same = same and self.cache_u[nzc + i] == x_[i]
            for i in range(ny):
                same = same and self.cache_u[nzc + nx + i] == y_[i]
            for i in range(nzd):
                same = same and self.cache_zd[i] == zd_[i]
        if not same:
            for i in range(nzc):
                self.full[i] = zc_[i]
            for i in range(nx):
                self.full[nzc + i] = x_[i]
            for i in range(ny):
                self.full[nzc + nx + i] = y_[i]
            self.k._eval_u(t, &self.full[0], zdp, &self.out[0])
            for i in range(nzc):
                self.hc_n[i] = self.out[i]
            for i in range(nx):
                self.f_n[i] = self.out[nzc + i]
        if self.slow:
            for i in range(nzc):
                self.u0[i] = zc_[i]
        for i in range(nx):
            self.u0[ns + i] = x_[i]
        for i in range(ny):
            self.u0[ns + nx + i] = y_[i]

        ok = False
        for attempt in range(2):
            fresh = False
            if not self.have_lu or self.lu_h != h:
                status = self._factor(t1, h, zdp, zcp)
                self.jacobian_count += 1
                if status == -1:
                    self.have_lu = False
                    raise NonFiniteEntry("finite-difference Jacobian has non-finite entries")
                if status == -2:
                    self.have_lu = False
                    raise SingularJacobian(f"pivot below {PIVOT_TOL:g} at t = {t1:.6g}")
                self.have_lu = True
                self.lu_h = h
                fresh = True
            for i in range(n):
                self.u[i] = self.u0[i]
            nr = self._residual(t1, h, &self.u[0], zdp, zcp, xp, &okv)
            # at least one correction (see the Python stepper)
            ok = False
            for it in range(self.max_iter):
                if ok or not isfinite(nr):
                    break
                self._solve()
                for i in range(n):
                    self.u[i] -= self.r[i]
                n_new = self._residual(t1, h, &self.u[0], zdp, zcp, xp, &okv)
                ok = okv != 0.0
                if not ok and not n_new < 0.5 * nr:
                    nr = n_new
                    break
                nr = n_new
            if ok and isfinite(nr):
                break
            ok = False
            self.have_lu = False
            if fresh:
                break
        if not ok:
            raise NoConvergence(f"Newton failed at t = {t1:.6g} with h = {h:.3g} (|r| = {nr:.3e})")

        # self.full / self.out hold the converged point
        u_arr = np.asarray(self.u)[:n]
        zc1 = u_arr[:ns].copy() if self.slow else np.asarray(zc_).copy()
        x1 = u_arr[ns:ns + nx].copy()
        y1 = u_arr[ns + nx:].copy()
        out = np.asarray(self.out)[:self.nfull].copy()
        self.last_eval = (out[:nzc], out[nzc:nzc + nx], out[nzc + nx:])
        self.cache_t = t1
        for i in range(nzc):
            self.cache_u[i] = zc1[i]
            self.hc_n[i] = out[i]
        for i in range(nx):
            self.cache_u[nzc + i] = x1[i]
            self.f_n[i] = out[nzc + i]
        for i in range(ny):
            self.cache_u[nzc + nx + i] = y1[i]
        for i in range(nzd):
            self.cache_zd[i] = zd_[i]
        self.have_cache = True
        return zc1, x1, y1
