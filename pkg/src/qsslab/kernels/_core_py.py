"""Pure-Python residual kernel for :class:`~qsslab.netmodel.SystemModel`.

Loops over devices calling the reference equations in
:mod:`qsslab.netmodel.devices`; the network is handled with numpy.
"""
import numpy as np

from ..model import fd_jacobian
from ..netmodel import devices as dv
from ..netmodel.network import injections


class PyKernel:
    backend = "python"

    def __init__(self, model):
        self.model = model
        L = model.layout
        self.sizes = (len(L.zc), len(L.x), len(L.y))

    def residual(self, t, zc, zd, x, y):
        m = self.model
        nzc, nx, ny = self.sizes
        hc = np.zeros(nzc)
        f = np.zeros(nx)
        g = np.zeros(ny)
        v = y[m.bus_iv]
        th = y[m.bus_ith]
        Pn, Qn = injections(m.admittance(zd), v, th)
        P = np.zeros(len(v))
        Q = np.zeros(len(v))

        for k, gen in enumerate(m.gens):
            b, ix, iy = m.gen_bus[k], m.gen_ix[k], m.gen_iy[k]
            delta, omega, e_q, e_d = x[ix:ix + 4]
            i_d, i_q, p, q, p_m, v_f = y[iy:iy + 6]
            f[ix:ix + 4] = dv.generator_fast(gen, delta, omega, e_q, e_d, i_d, i_q, p, p_m, v_f, v[b], th[b])
            g[iy:iy + 4] = dv.generator_algebraic(gen, delta, e_q, e_d, i_d, i_q, p, q, v[b], th[b])
            it = m.gen_tg[k]
            if it >= 0:
                iz = m.tg_iz[it]
                g[iy + 4] = dv.tg_power(m.tgs[it], *zc[iz:iz + 3]) - p_m
            else:
                g[iy + 4] = gen.p_m0 - p_m
            ia = m.gen_avr[k]
            g[iy + 5] = (x[m.avr_ix[ia] + 3] if ia >= 0 else gen.v_f0) - v_f
            P[b] += p
            Q[b] += q

        for k, a in enumerate(m.avrs):
            b = m.gen_bus[m.avr_gen[k]]
            ix, iy = m.avr_ix[k], m.avr_iy[k]
            v_ref = y[iy]
            f[ix:ix + 4] = dv.avr_fast(a, *x[ix:ix + 4], v[b], v_ref)
            io = m.avr_oxl[k]
            g[iy] = a.v_ref0 - v_ref - (zc[m.oxl_iz[io]] if io >= 0 else 0.0)

        for k, tg in enumerate(m.tgs):
            iz, iy = m.tg_iz[k], m.tg_iy[k]
            omega = x[m.gen_ix[m.tg_gen[k]] + 1]
            hc[iz:iz + 3] = dv.tg_slow(tg, *zc[iz:iz + 3], omega, y[iy])
            g[iy] = tg.omega_ref0 - y[iy]

        for k, o in enumerate(m.oxls):
            kg = m.oxl_gen[k]
            b, giy = m.gen_bus[kg], m.gen_iy[kg]
            iz, iy = m.oxl_iz[k], m.oxl_iy[k]
            g[iy] = dv.oxl_field_current(o, v[b], y[giy + 2], y[giy + 3]) - y[iy]
            hc[iz] = dv.oxl_slow(o, zc[iz], y[iy], t)

        for k, e in enumerate(m.erls):
            b, iz, iy = m.erl_bus[k], m.erl_iz[k], m.erl_iy[k]
            hc[iz:iz + 2] = dv.erl_slow(e, zc[iz], zc[iz + 1], v[b])
            pe, qe = dv.erl_power(e, zc[iz], zc[iz + 1], v[b])
            g[iy] = pe - y[iy]
            g[iy + 1] = qe - y[iy + 1]
            P[b] -= y[iy]
            Q[b] -= y[iy + 1]

        for k, ld in enumerate(m.loads):
            b = m.load_bus[k]
            p, q = dv.load_power(ld, v[b])
            P[b] -= p
            Q[b] -= q

        slack = m.bus_slack.astype(bool)
        g[m.bus_ith] = np.where(slack, th - m.bus_thset, P - Pn)
        g[m.bus_iv] = np.where(slack, v - m.bus_vset, Q - Qn)
        return hc, f, g

    def jacobian(self, t, zc, zd, x, y):
        nzc, nx, _ = self.sizes
        zd = np.asarray(zd, dtype=float)

        def stacked(u):
            return np.concatenate(self.residual(t, u[:nzc], zd, u[nzc:nzc + nx], u[nzc + nx:]))

        u0 = np.concatenate([zc, x, y]).astype(float)
        J = fd_jacobian(stacked, u0, m=u0.size)
        for row, entries in self.model.exact_rows.items():
            J[row, :] = 0.0
            for col, val in entries:
                J[row, col] = val
        return J

    def make_stepper(self, model, mode, eps, tol):
        from ..sim.stepper import PyStepper

        return PyStepper(model, mode, eps, tol)
