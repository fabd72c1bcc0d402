"""The power-system model: network plus devices, realizing h_c, h_d, f and g."""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import LayoutError, ValidationError
from ..layout import Layout, PartitionedState
from ..model import DynamicModel
from . import devices as dv
from .network import Network, injections


@dataclass(frozen=True)
class LtcTimer:
    """Per-LTC timer: when the voltage left the band, and whether a tap already fired."""

    armed_since: float | None = None
    tapped: bool = False


@dataclass(frozen=True)
class Event:
    time: float
    device: str
    old: float
    new: float


class SystemModel(DynamicModel):
    """Network plus device blocks.

    The model is immutable; contingencies and initialization return new
    instances. Residuals are evaluated by the kernel selected in
    :mod:`qsslab.kernels` (compiled when available).
    """

    def __init__(self, network: Network, gens=(), avrs=(), tgs=(), oxls=(), erls=(),
                 ltcs=(), loads=(), name="system", backend=None, discrete_enabled=True):
        self.network = network
        self.gens = tuple(gens)
        self.avrs = tuple(avrs)
        self.tgs = tuple(tgs)
        self.oxls = tuple(oxls)
        self.erls = tuple(erls)
        self.ltcs = tuple(ltcs)
        self.loads = tuple(loads)
        self.name = name
        self.discrete_enabled = discrete_enabled
        self._backend_request = backend
        self._validate()
        self.layout = self._build_layout()
        self._build_maps()
        self.exact_rows = self._exact_rows()
        from ..kernels import make_kernel

        self.kernel = make_kernel(self, backend)

    # ------------------------------------------------------------ structure
    @property
    def devices(self):
        return self.gens + self.avrs + self.tgs + self.oxls + self.erls + self.ltcs + self.loads

    def device(self, dev_id):
        for d in self.devices:
            if d.id == dev_id:
                return d
        raise ValidationError("unknown device", key=dev_id)

    @property
    def backend(self) -> str:
        return self.kernel.backend

    def _validate(self):
        ids = set()
        for bus in self.network.buses:
            bus.validate()
        for br in self.network.branches:
            br.validate()
        for d in self.devices:
            if d.id in ids:
                raise ValidationError("duplicate device id", key=d.id)
            ids.add(d.id)
            d.validate()
            if hasattr(d, "bus"):
                self.network.bus_index(d.bus)
        gen_ids = {g.id for g in self.gens}
        for kind, group in (("avr", self.avrs), ("tg", self.tgs), ("oxl", self.oxls)):
            attached = set()
            for d in group:
                if d.gen not in gen_ids:
                    raise ValidationError(f"references unknown generator {d.gen!r}", key=f"{d.id}.gen")
                if d.gen in attached:
                    raise ValidationError(f"second {kind} on generator {d.gen!r}", key=f"{d.id}.gen")
                attached.add(d.gen)
        avr_gens = {a.gen for a in self.avrs}
        for o in self.oxls:
            if o.gen not in avr_gens:
                raise ValidationError("OXL needs an AVR on the same generator", key=f"{o.id}.gen")
        branch_ids = {b.id for b in self.network.branches}
        used = set()
        for c in self.ltcs:
            if c.branch not in branch_ids:
                raise ValidationError(f"references unknown branch {c.branch!r}", key=f"{c.id}.branch")
            if c.branch in used:
                raise ValidationError("two LTCs on one branch", key=f"{c.id}.branch")
            used.add(c.branch)
        for g in self.gens:
            if self.network.buses[self.network.bus_index(g.bus)].type == "slack":
                raise ValidationError("generators cannot sit on an infinite bus", key=f"{g.id}.bus")
        gen_buses = [g.bus for g in self.gens]
        if len(set(gen_buses)) != len(gen_buses):
            raise ValidationError("at most one generator per bus", key="gen.bus")

    def _build_layout(self):
        zc, zd, x, y = [], [], [], []
        for t in self.tgs:
            zc += [f"{t.id}.x_g1", f"{t.id}.x_g2", f"{t.id}.x_g3"]
        for o in self.oxls:
            zc.append(f"{o.id}.v_oxl")
        for e in self.erls:
            zc += [f"{e.id}.x_p", f"{e.id}.x_q"]
        for c in self.ltcs:
            zd.append(f"{c.id}.m")
        for g in self.gens:
            x += [f"{g.id}.delta", f"{g.id}.omega", f"{g.id}.e_q_prime", f"{g.id}.e_d_prime"]
        for a in self.avrs:
            x += [f"{a.id}.v_m", f"{a.id}.v_r1", f"{a.id}.v_r2", f"{a.id}.v_f"]
        for g in self.gens:
            y += [f"{g.id}.{n}" for n in ("i_d", "i_q", "p", "q", "p_m", "v_f")]
        for a in self.avrs:
            y.append(f"{a.id}.v_ref")
        for t in self.tgs:
            y.append(f"{t.id}.omega_ref")
        for o in self.oxls:
            y.append(f"{o.id}.i_f")
        for e in self.erls:
            y += [f"{e.id}.p", f"{e.id}.q"]
        for b in self.network.buses:
            y += [f"bus{b.id}.v", f"bus{b.id}.theta"]
        return Layout(zc, zd, x, y)

    def _build_maps(self):
        L = self.layout
        net = self.network
        gidx = {g.id: k for k, g in enumerate(self.gens)}
        self.gen_pos = gidx
        self.bus_pos = {b.id: k for k, b in enumerate(net.buses)}
        self.gen_bus = np.array([self.bus_pos[g.bus] for g in self.gens], dtype=np.intp)
        self.gen_ix = np.array([L.locate(f"{g.id}.delta")[1] for g in self.gens], dtype=np.intp)
        self.gen_iy = np.array([L.locate(f"{g.id}.i_d")[1] for g in self.gens], dtype=np.intp)
        avr_of = {a.gen: k for k, a in enumerate(self.avrs)}
        tg_of = {t.gen: k for k, t in enumerate(self.tgs)}
        oxl_of = {o.gen: k for k, o in enumerate(self.oxls)}
        self.gen_avr = np.array([avr_of.get(g.id, -1) for g in self.gens], dtype=np.intp)
        self.gen_tg = np.array([tg_of.get(g.id, -1) for g in self.gens], dtype=np.intp)
        self.avr_gen = np.array([gidx[a.gen] for a in self.avrs], dtype=np.intp)
        self.avr_ix = np.array([L.locate(f"{a.id}.v_m")[1] for a in self.avrs], dtype=np.intp)
        self.avr_iy = np.array([L.locate(f"{a.id}.v_ref")[1] for a in self.avrs], dtype=np.intp)
        self.avr_oxl = np.array([oxl_of.get(a.gen, -1) for a in self.avrs], dtype=np.intp)
        self.tg_gen = np.array([gidx[t.gen] for t in self.tgs], dtype=np.intp)
        self.tg_iz = np.array([L.locate(f"{t.id}.x_g1")[1] for t in self.tgs], dtype=np.intp)
        self.tg_iy = np.array([L.locate(f"{t.id}.omega_ref")[1] for t in self.tgs], dtype=np.intp)
        self.oxl_gen = np.array([gidx[o.gen] for o in self.oxls], dtype=np.intp)
        self.oxl_iz = np.array([L.locate(f"{o.id}.v_oxl")[1] for o in self.oxls], dtype=np.intp)
        self.oxl_iy = np.array([L.locate(f"{o.id}.i_f")[1] for o in self.oxls], dtype=np.intp)
        self.erl_bus = np.array([self.bus_pos[e.bus] for e in self.erls], dtype=np.intp)
        self.erl_iz = np.array([L.locate(f"{e.id}.x_p")[1] for e in self.erls], dtype=np.intp)
        self.erl_iy = np.array([L.locate(f"{e.id}.p")[1] for e in self.erls], dtype=np.intp)
        self.load_bus = np.array([self.bus_pos[ld.bus] for ld in self.loads], dtype=np.intp)
        self.bus_iv = np.array([L.locate(f"bus{b.id}.v")[1] for b in net.buses], dtype=np.intp)
        self.bus_ith = self.bus_iv + 1
        self.bus_slack = np.array([b.type == "slack" for b in net.buses], dtype=np.intp)
        self.bus_vset = np.array([b.v for b in net.buses], dtype=float)
        self.bus_thset = np.array([b.theta for b in net.buses], dtype=float)
        ltc_branches = [c.branch for c in self.ltcs]
        self.Y0 = net.admittance(exclude=set(ltc_branches))
        brs = [net.branch(bid) for bid in ltc_branches]
        self.ltc_from = np.array([self.bus_pos[b.from_bus] for b in brs], dtype=np.intp)
        self.ltc_to = np.array([self.bus_pos[b.to_bus] for b in brs], dtype=np.intp)
        self.ltc_ys = np.array([b.series_admittance for b in brs], dtype=complex)
        self.ltc_ysh = np.array([0.5 * b.b for b in brs], dtype=float)
        self.ltc_ctrl = np.array([self.bus_pos[c.bus] for c in self.ltcs], dtype=np.intp)

    def _exact_rows(self):
        """Rows of the (h_c, f, g) Jacobian that are linear with known coefficients.

        Returns ``{row: [(col, value), ...]}`` in (zc, x, y) index space.
        """
        L = self.layout
        nzc, nx = len(L.zc), len(L.x)
        col = {}
        for k, n in enumerate(L.zc):
            col[n] = k
        for k, n in enumerate(L.x):
            col[n] = nzc + k
        for k, n in enumerate(L.y):
            col[n] = nzc + nx + k
        rows = {}
        for k, g in enumerate(self.gens):
            rows[col[f"{g.id}.delta"]] = [(col[f"{g.id}.omega"], g.omega_b)]
            if self.gen_tg[k] < 0:
                rows[col[f"{g.id}.p_m"]] = [(col[f"{g.id}.p_m"], -1.0)]
            else:
                t = self.tgs[self.gen_tg[k]]
                a3 = t.t_3 / t.t_c
                r = t.t_4 / t.t_5
                rows[col[f"{g.id}.p_m"]] = [
                    (col[f"{t.id}.x_g1"], r * a3), (col[f"{t.id}.x_g2"], r),
                    (col[f"{t.id}.x_g3"], 1.0), (col[f"{g.id}.p_m"], -1.0)]
            if self.gen_avr[k] < 0:
                rows[col[f"{g.id}.v_f"]] = [(col[f"{g.id}.v_f"], -1.0)]
            else:
                a = self.avrs[self.gen_avr[k]]
                rows[col[f"{g.id}.v_f"]] = [(col[f"{a.id}.v_f"], 1.0), (col[f"{g.id}.v_f"], -1.0)]
        for k, a in enumerate(self.avrs):
            entries = [(col[f"{a.id}.v_ref"], -1.0)]
            if self.avr_oxl[k] >= 0:
                entries.append((col[f"{self.oxls[self.avr_oxl[k]].id}.v_oxl"], -1.0))
            rows[col[f"{a.id}.v_ref"]] = entries
        for t in self.tgs:
            rows[col[f"{t.id}.omega_ref"]] = [(col[f"{t.id}.omega_ref"], -1.0)]
        for k, b in enumerate(self.network.buses):
            if self.bus_slack[k]:
                rows[col[f"bus{b.id}.v"]] = [(col[f"bus{b.id}.v"], 1.0)]
                rows[col[f"bus{b.id}.theta"]] = [(col[f"bus{b.id}.theta"], 1.0)]
        return rows

    # ------------------------------------------------------------ residuals
    def eval_all(self, t, zc, zd, x, y):
        return self.kernel.residual(t, zc, zd, x, y)

    def eval_jacobian(self, t, zc, zd, x, y):
        return self.kernel.jacobian(t, zc, zd, x, y)

    def admittance(self, zd) -> np.ndarray:
        """Full admittance matrix at the given tap ratios."""
        Y = self.Y0.copy()
        for k in range(len(self.ltcs)):
            m = zd[k]
            i, j = self.ltc_from[k], self.ltc_to[k]
            ys = self.ltc_ys[k]
            ysh = 1j * self.ltc_ysh[k]
            Y[i, i] += (ys + ysh) / m**2
            Y[i, j] += -ys / m
            Y[j, i] += -ys / m
            Y[j, j] += ys + ysh
        return Y

    def make_stepper(self, mode, eps, tol):
        return self.kernel.make_stepper(self, mode, eps, tol)

    # ------------------------------------------------------------- discrete
    @property
    def has_discrete(self):
        return self.discrete_enabled and bool(self.ltcs)

    def without_discrete(self):
        return self._rebuild(discrete_enabled=False)

    def init_timers(self, state, t):
        return tuple(LtcTimer() for _ in self.ltcs)

    def discrete_pending(self, timers, state=None):
        """True while some LTC is armed and its tap rule would still move the tap.

        An LTC held at a tap limit stays armed but cannot act; it does not
        count. Without ``state`` every armed timer counts.
        """
        if not self.has_discrete:
            return False
        for k, (c, tm) in enumerate(zip(self.ltcs, timers)):
            if tm.armed_since is None:
                continue
            if state is None:
                return True
            v = state.y[self.bus_iv[self.ltc_ctrl[k]]]
            if dv.ltc_rule(c, state.zd[k], v) != state.zd[k]:
                return True
        return False

    def eval_discrete_update(self, state: PartitionedState, timers, t: float):
        """Apply the LTC tap rule to every LTC whose delay has elapsed.

        Returns ``(new_zd, events, new_timers)``; events are ordered
        earliest-armed first, controlled bus id breaking ties.
        """
        state.check(self.layout)
        zd = np.array(state.zd)
        if not self.has_discrete:
            return zd, [], timers
        fired = []
        new_timers = []
        for k, c in enumerate(self.ltcs):
            timer = timers[k]
            v = state.y[self.bus_iv[self.ltc_ctrl[k]]]
            if c.v0 - c.d <= v <= c.v0 + c.d:
                new_timers.append(LtcTimer())
                continue
            armed = t if timer.armed_since is None else timer.armed_since
            delay = c.delay_next if timer.tapped else c.delay_first
            if t - armed >= delay - 1e-9:
                m_new = dv.ltc_rule(c, zd[k], v)
                if m_new != zd[k]:
                    fired.append((armed, c.bus, k, zd[k], m_new))
                new_timers.append(LtcTimer(armed_since=t, tapped=True))
            else:
                new_timers.append(LtcTimer(armed_since=armed, tapped=timer.tapped))
        fired.sort(key=lambda e: (e[0], e[1]))
        events = []
        for _, _, k, old, new in fired:
            zd[k] = new
            events.append(Event(t, self.ltcs[k].id, float(old), float(new)))
        return zd, events, tuple(new_timers)

    # ------------------------------------------------------------- metadata
    def fast_time_constant(self):
        taus = [1e-3]
        for g in self.gens:
            taus += [g.t_d0_prime, g.t_q0_prime]
        for a in self.avrs:
            taus += [a.t_a, a.t_f, a.t_e, a.t_r]
        return max(taus)

    def angle_spread(self, x, y):
        angles = [x[i] for i in self.gen_ix]
        angles += [y[self.bus_ith[k]] for k in np.flatnonzero(self.bus_slack)]
        if len(angles) < 2:
            return 0.0
        return max(angles) - min(angles)

    def wrap_fast(self, x):
        out = np.array(x, dtype=float)
        out[self.gen_ix] = np.mod(out[self.gen_ix] + math.pi, 2 * math.pi) - math.pi
        return out

    # ------------------------------------------------------ modifications
    def _rebuild(self, **changes):
        kw = dict(network=self.network, gens=self.gens, avrs=self.avrs, tgs=self.tgs,
                  oxls=self.oxls, erls=self.erls, ltcs=self.ltcs, loads=self.loads,
                  name=self.name, backend=self._backend_request,
                  discrete_enabled=self.discrete_enabled)
        kw.update(changes)
        return SystemModel(**kw)

    def with_backend(self, backend):
        return self._rebuild(backend=backend)

    def replace_device(self, new):
        groups = {}
        for attr in ("gens", "avrs", "tgs", "oxls", "erls", "ltcs", "loads"):
            group = getattr(self, attr)
            if any(d.id == new.id for d in group):
                groups[attr] = tuple(new if d.id == new.id else d for d in group)
                return self._rebuild(**groups)
        raise ValidationError("unknown device", key=new.id)

    def apply_change(self, change: dict) -> "SystemModel":
        """Apply one contingency record (branch-outage, load-step, parameter-set)."""
        kind = change.get("type")
        if kind == "branch-outage":
            bid = change["branch"]
            if any(c.branch == bid for c in self.ltcs):
                raise ValidationError("cannot trip a branch carrying an LTC", key=bid)
            return self._rebuild(network=self.network.without_branch(bid))
        if kind == "load-step":
            d = self.device(change["device"])
            if isinstance(d, dv.StaticLoad):
                return self.replace_device(replace(d, p=d.p + change.get("dp", 0.0),
                                                   q=d.q + change.get("dq", 0.0)))
            if isinstance(d, dv.ErlModel):
                return self.replace_device(replace(d, p_l0=d.p_l0 + change.get("dp", 0.0),
                                                   q_l0=d.q_l0 + change.get("dq", 0.0)))
            raise ValidationError("load-step needs a load or erl device", key=change["device"])
        if kind == "parameter-set":
            target, param, value = change["device"], change["param"], change["value"]
            for br in self.network.branches:
                if br.id == target:
                    if param not in ("r", "x", "b"):
                        raise ValidationError("settable branch parameters are r, x, b", key=f"{target}.{param}")
                    nb = replace(br, **{param: value})
                    net = Network(self.network.buses,
                                  tuple(nb if b.id == target else b for b in self.network.branches))
                    return self._rebuild(network=net)
            d = self.device(target)
            if param not in d.param_names() or param in ("id", "bus", "gen", "branch"):
                raise ValidationError("unknown or immutable parameter", key=f"{target}.{param}")
            return self.replace_device(replace(d, **{param: value}))
        raise ValidationError(f"unknown change type {kind!r}", key="contingency.type")

    # ------------------------------------------------------ initialization
    def power_flow(self, tol=1e-11, max_iter=30):
        """Solve the load flow; returns bus voltages, angles and generator (p, q)."""
        from ..algebra import newton

        net = self.network
        nb = net.n_bus
        types = [b.type for b in net.buses]
        gen_at = {self.bus_pos[g.bus]: g for g in self.gens}
        for k, tp in enumerate(types):
            if tp == "pv" and k not in gen_at:
                raise ValidationError("pv bus without generator", key=f"bus{net.buses[k].id}.type")
        th_idx = [k for k in range(nb) if types[k] != "slack"]
        v_idx = [k for k in range(nb) if types[k] == "pq"]
        Y = self.admittance(np.array([net.branch(c.branch).tap for c in self.ltcs]))
        v0 = np.array([b.v for b in net.buses])
        th0 = np.array([b.theta for b in net.buses])

        def unpack(u):
            v, th = v0.copy(), th0.copy()
            th[th_idx] = u[:len(th_idx)]
            v[v_idx] = u[len(th_idx):]
            return v, th

        def spec_power(v):
            P = np.zeros(nb)
            Q = np.zeros(nb)
            for k, g in gen_at.items():
                P[k] += g.p0
            for ld, b in zip(self.loads, self.load_bus):
                p, q = dv.load_power(ld, v[b])
                P[b] -= p
                Q[b] -= q
            for e, b in zip(self.erls, self.erl_bus):
                r = 1.0 if e.v0 is None else v[b] / e.v0
                P[b] -= e.p0 * r ** e.alpha_s
                Q[b] -= e.q0 * r ** e.beta_s
            return P, Q

        def mismatch(u):
            v, th = unpack(u)
            Pn, Qn = injections(Y, v, th)
            Ps, Qs = spec_power(v)
            return np.concatenate([(Ps - Pn)[th_idx], (Qs - Qn)[v_idx]])

        u = newton(mismatch, np.concatenate([th0[th_idx], v0[v_idx]]), tol=tol, max_iter=max_iter)
        v, th = unpack(u)
        Pn, Qn = injections(Y, v, th)
        _, Qs = spec_power(v)
        gen_pq = {g.id: (g.p0, Qn[k] - Qs[k]) for k, g in gen_at.items()}
        return v, th, gen_pq

    def initialize(self):
        """Power flow plus device back-substitution.

        Returns ``(model, state)``: a model whose derived parameters
        (p_m0, v_f0, v_ref0, p_order, ERL/LTC reference voltages) are filled
        in and an equilibrium state of it.
        """
        v, th, gen_pq = self.power_flow()
        vals = {}
        gens, avrs, tgs, erls, ltcs = [], [], [], [], []
        avr_by_gen = {a.gen: a for a in self.avrs}
        tg_by_gen = {t.gen: t for t in self.tgs}
        for g in self.gens:
            b = self.bus_pos[g.bus]
            P, Q = gen_pq[g.id]
            V = cmath.rect(v[b], th[b])
            current = ((P + 1j * Q) / V).conjugate()
            E = V + complex(g.r_a, g.x_q) * current
            delta = cmath.phase(E)
            rot = cmath.exp(-1j * (delta - math.pi / 2))
            vdq = V * rot
            idq = current * rot
            v_d, v_q, i_d, i_q = vdq.real, vdq.imag, idq.real, idq.imag
            e_d = v_d + g.r_a * i_d - g.x_q_prime * i_q
            e_q = v_q + g.r_a * i_q + g.x_d_prime * i_d
            g = replace(g, p0=P)
            p_m = (v_q + g.r_a * i_q) * i_q + (v_d + g.r_a * i_d) * i_d
            v_f = dv.saturation(g, e_q) + (g.x_d - g.x_d_prime) * i_d
            g = replace(g, p_m0=p_m, v_f0=v_f)
            gens.append(g)
            vals.update({f"{g.id}.delta": delta, f"{g.id}.omega": 1.0,
                         f"{g.id}.e_q_prime": e_q, f"{g.id}.e_d_prime": e_d,
                         f"{g.id}.i_d": i_d, f"{g.id}.i_q": i_q, f"{g.id}.p": P,
                         f"{g.id}.q": Q, f"{g.id}.p_m": p_m, f"{g.id}.v_f": v_f})
            if g.id in avr_by_gen:
                a = avr_by_gen[g.id]
                v_r = v_f * (a.k_e + dv.avr_ceiling(a, v_f))
                if not a.v_r_min <= v_r <= a.v_r_max:
                    raise ValidationError("initial regulator output outside its limits", key=f"{a.id}.v_r_max")
                a = replace(a, v_ref0=v[b] + v_r / a.k_a)
                avrs.append(a)
                vals.update({f"{a.id}.v_m": v[b], f"{a.id}.v_r1": v_r,
                             f"{a.id}.v_r2": -a.k_f / a.t_f * v_f, f"{a.id}.v_f": v_f,
                             f"{a.id}.v_ref": a.v_ref0})
            if g.id in tg_by_gen:
                t = tg_by_gen[g.id]
                if not t.p_min <= p_m <= t.p_max:
                    raise ValidationError("initial mechanical power outside turbine limits", key=f"{t.id}.p_max")
                t = replace(t, p_order=p_m - (t.omega_ref0 - 1.0) / t.r)
                tgs.append(t)
                a3 = t.t_3 / t.t_c
                x1 = p_m
                x2 = (1 - a3) * x1
                vals.update({f"{t.id}.x_g1": x1, f"{t.id}.x_g2": x2,
                             f"{t.id}.x_g3": (1 - t.t_4 / t.t_5) * (x2 + a3 * x1),
                             f"{t.id}.omega_ref": t.omega_ref0})
        for o in self.oxls:
            g = next(gg for gg in gens if gg.id == o.gen)
            b = self.bus_pos[g.bus]
            P, Q = gen_pq[g.id]
            vals[f"{o.id}.v_oxl"] = 0.0
            vals[f"{o.id}.i_f"] = dv.oxl_field_current(o, v[b], P, Q)
        for e in self.erls:
            b = self.bus_pos[e.bus]
            if e.v0 is None:
                e = replace(e, v0=float(v[b]))
            erls.append(e)
            vals.update({f"{e.id}.x_p": 0.0, f"{e.id}.x_q": 0.0})
            p_s, p_t, q_s, q_t = dv.erl_static_transient(e, v[b])
            vals[f"{e.id}.x_p"] = e.t_p * (p_s - p_t)
            vals[f"{e.id}.x_q"] = e.t_q * (q_s - q_t)
            vals[f"{e.id}.p"] = p_s
            vals[f"{e.id}.q"] = q_s
        for c in self.ltcs:
            if c.v0 is None:
                c = replace(c, v0=float(v[self.bus_pos[c.bus]]))
            ltcs.append(c)
            vals[f"{c.id}.m"] = self.network.branch(c.branch).tap
        for k, bus in enumerate(self.network.buses):
            vals[f"bus{bus.id}.v"] = v[k]
            vals[f"bus{bus.id}.theta"] = th[k]
        model = self._rebuild(gens=gens, avrs=avrs, tgs=tgs, erls=erls, ltcs=ltcs)
        L = model.layout
        arrays = {p: np.array([vals[n] for n in getattr(L, p)], dtype=float) for p in ("zc", "zd", "x", "y")}
        return model, PartitionedState(L, **arrays)


# ------------------------------------------------------------ module API
def _split(model, s):
    s.check(model.layout)
    return s.zc, s.zd, s.x, s.y


def eval_fast(model: DynamicModel, s: PartitionedState) -> np.ndarray:
    """Values of f (fast right-hand sides) at ``s``."""
    return model.eval_all(0.0, *_split(model, s))[1]


def eval_algebraic(model: DynamicModel, s: PartitionedState) -> np.ndarray:
    """Values of g (algebraic residuals) at ``s``."""
    return model.eval_all(0.0, *_split(model, s))[2]


def eval_slow_continuous(model: DynamicModel, s: PartitionedState, clock: float) -> np.ndarray:
    """Values of h_c (slow right-hand sides) at ``s`` and time ``clock``."""
    return model.eval_all(clock, *_split(model, s))[0]


def eval_discrete_update(model: DynamicModel, s: PartitionedState, timers, clock: float):
    """Discrete update h_d: returns (new zd, fired events, new timers)."""
    if len(timers) != len(getattr(model, "ltcs", timers)):
        raise LayoutError("timer count does not match the LTC count")
    return model.eval_discrete_update(s, timers, clock)
