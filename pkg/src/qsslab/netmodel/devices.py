"""Device parameter records and their scalar equations.

The functions here evaluate one device at a time on plain floats. They are
the readable reference for the device equations: the pure-Python kernel
calls them directly and the compiled kernel is tested against them.

All quantities are per unit on the system base, angles in radians and time
constants in seconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

from ..errors import ValidationError


def _positive(obj, *names):
    for name in names:
        if not getattr(obj, name) > 0:
            raise ValidationError(f"must be > 0 (got {getattr(obj, name)!r})", key=f"{obj.id}.{name}")


def _ordered(obj, lo, hi):
    if not getattr(obj, lo) < getattr(obj, hi):
        raise ValidationError(f"{lo} must be < {hi}", key=f"{obj.id}.{hi}")


class _Device:
    """Mixin: parameter names and validation hooks."""

    @classmethod
    def param_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))

    def validate(self):
        pass


# ----------------------------------------------------------------- generator
@dataclass(frozen=True)
class GeneratorModel(_Device):
    id: str
    bus: int
    p0: float = 0.0
    omega_b: float = 2 * math.pi * 60.0
    m: float = 8.0
    d: float = 1.0
    x_d: float = 1.8
    x_d_prime: float = 0.3
    x_q: float = 1.7
    x_q_prime: float = 0.55
    r_a: float = 0.0
    t_d0_prime: float = 8.0
    t_q0_prime: float = 0.4
    k_omega: float = 0.0
    k_p: float = 0.0
    sat_a: float = 0.0
    sat_b: float = 0.0
    # filled at initialization
    p_m0: float = 0.0
    v_f0: float = 0.0

    def validate(self):
        _positive(self, "m", "t_d0_prime", "t_q0_prime", "x_d_prime", "x_q_prime", "omega_b")
        if self.x_d < self.x_d_prime:
            raise ValidationError("x_d must be >= x_d_prime", key=f"{self.id}.x_d")
        if self.x_q < self.x_q_prime:
            raise ValidationError("x_q must be >= x_q_prime", key=f"{self.id}.x_q")


def saturation(g: GeneratorModel, e_q: float) -> float:
    """f_s(e'_q) = e'_q + a_s exp(b_s e'_q); linear when a_s = 0."""
    if g.sat_a == 0.0:
        return e_q
    return e_q + g.sat_a * math.exp(g.sat_b * e_q)


def park(v, theta, delta):
    """Terminal voltage in the rotor frame: (v_d, v_q)."""
    return v * math.sin(delta - theta), v * math.cos(delta - theta)


def generator_fast(g: GeneratorModel, delta, omega, e_q, e_d, i_d, i_q, p, p_m, v_f, v, theta):
    v_d, v_q = park(v, theta, delta)
    p_e = (v_q + g.r_a * i_q) * i_q + (v_d + g.r_a * i_d) * i_d
    v_f_star = v_f + g.k_omega * (omega - 1.0) - g.k_p * (p - g.p0)
    return (
        g.omega_b * (omega - 1.0),
        (p_m - p_e - g.d * (omega - 1.0)) / g.m,
        (-saturation(g, e_q) - (g.x_d - g.x_d_prime) * i_d + v_f_star) / g.t_d0_prime,
        (-e_d + (g.x_q - g.x_q_prime) * i_q) / g.t_q0_prime,
    )


def generator_algebraic(g: GeneratorModel, delta, e_q, e_d, i_d, i_q, p, q, v, theta):
    """Stator equations and terminal power definitions, in that order."""
    v_d, v_q = park(v, theta, delta)
    return (
        v_d + g.r_a * i_d - e_d - g.x_q_prime * i_q,
        v_q + g.r_a * i_q - e_q + g.x_d_prime * i_d,
        v_d * i_d + v_q * i_q - p,
        v_q * i_d - v_d * i_q - q,
    )


# ----------------------------------------------------------------------- avr
@dataclass(frozen=True)
class AvrModel(_Device):
    id: str
    gen: str
    k_a: float = 200.0
    t_a: float = 0.02
    k_f: float = 0.002
    t_f: float = 1.0
    k_e: float = 1.0
    t_e: float = 0.2
    t_r: float = 0.02
    a_e: float = 0.0
    b_e: float = 0.0
    v_r_max: float = 5.0
    v_r_min: float = -5.0
    v_ref0: float = 0.0

    def validate(self):
        _positive(self, "t_a", "t_f", "t_e", "t_r")
        _ordered(self, "v_r_min", "v_r_max")


def avr_regulator_output(a: AvrModel, v_r1: float) -> float:
    return min(max(v_r1, a.v_r_min), a.v_r_max)


def avr_ceiling(a: AvrModel, v_f: float) -> float:
    return a.a_e * math.exp(a.b_e * abs(v_f))


def avr_fast(a: AvrModel, v_m, v_r1, v_r2, v_f, v, v_ref):
    kf = a.k_f / a.t_f
    v_r = avr_regulator_output(a, v_r1)
    return (
        (v - v_m) / a.t_r,
        (a.k_a * (v_ref - v_m - v_r2 - kf * v_f) - v_r1) / a.t_a,
        -(kf * v_f + v_r2) / a.t_f,
        -(v_f * (a.k_e + avr_ceiling(a, v_f)) - v_r) / a.t_e,
    )


# ------------------------------------------------------------------- governor
@dataclass(frozen=True)
class TurbineGovernorModel(_Device):
    id: str
    gen: str
    r: float = 0.05
    p_max: float = 2.0
    p_min: float = 0.0
    t_s: float = 2.0
    t_c: float = 0.4
    t_3: float = 0.0
    t_4: float = 3.0
    t_5: float = 10.0
    omega_ref0: float = 1.0
    p_order: float = 0.0

    def validate(self):
        _positive(self, "t_s", "t_c", "t_5", "r")
        _ordered(self, "p_min", "p_max")


def tg_input(t: TurbineGovernorModel, omega, omega_ref):
    p_star = t.p_order + (omega_ref - omega) / t.r
    return min(max(p_star, t.p_min), t.p_max)


def tg_slow(t: TurbineGovernorModel, x_g1, x_g2, x_g3, omega, omega_ref):
    p_in = tg_input(t, omega, omega_ref)
    a3 = t.t_3 / t.t_c
    return (
        (p_in - x_g1) / t.t_s,
        ((1.0 - a3) * x_g1 - x_g2) / t.t_c,
        ((1.0 - t.t_4 / t.t_5) * (x_g2 + a3 * x_g1) - x_g3) / t.t_5,
    )


def tg_power(t: TurbineGovernorModel, x_g1, x_g2, x_g3):
    return x_g3 + t.t_4 / t.t_5 * (x_g2 + t.t_3 / t.t_c * x_g1)


# ------------------------------------------------------------------------ oxl
@dataclass(frozen=True)
class OxlModel(_Device):
    id: str
    gen: str
    t_0: float = 10.0
    i_f_lim: float = 2.5
    delay: float = 0.0
    x_d: float = 1.8
    x_q: float = 1.8

    def validate(self):
        _positive(self, "t_0", "x_q")
        if self.delay < 0:
            raise ValidationError("must be >= 0", key=f"{self.id}.delay")


def oxl_field_current(o: OxlModel, v, p, q):
    """Field-current estimate from terminal quantities.

    E = |v + j x_q I| behind the q-axis reactance, plus the saliency term
    (x_d/x_q - 1) times the d-axis current projection. With x_d = x_q the
    estimate reduces to E.
    """
    gp = o.x_q * p / v
    gq = o.x_q * q / v
    e = math.sqrt((v + gq) ** 2 + gp ** 2)
    return e + (o.x_d / o.x_q - 1.0) * (gq * (v + gq) + gp ** 2) / e


def oxl_slow(o: OxlModel, v_oxl, i_f, t):
    if t < o.delay or i_f <= o.i_f_lim:
        return 0.0
    rate = (i_f - o.i_f_lim) / o.t_0
    if v_oxl <= 0.0 and rate < 0.0:
        return 0.0
    return rate


# ------------------------------------------------------------------------ erl
@dataclass(frozen=True)
class ErlModel(_Device):
    id: str
    bus: int
    p_l0: float = 0.0
    q_l0: float = 0.0
    k_p: float = 100.0
    k_q: float = 100.0
    t_p: float = 60.0
    t_q: float = 60.0
    alpha_s: float = 0.0
    alpha_t: float = 2.0
    beta_s: float = 0.0
    beta_t: float = 2.0
    v0: Optional[float] = None

    def validate(self):
        _positive(self, "t_p", "t_q")
        if self.v0 is not None and not self.v0 > 0:
            raise ValidationError("must be > 0", key=f"{self.id}.v0")

    @property
    def p0(self):
        return self.k_p / 100.0 * self.p_l0

    @property
    def q0(self):
        return self.k_q / 100.0 * self.q_l0


def erl_static_transient(e: ErlModel, v):
    r = v / e.v0
    return (
        e.p0 * r ** e.alpha_s,
        e.p0 * r ** e.alpha_t,
        e.q0 * r ** e.beta_s,
        e.q0 * r ** e.beta_t,
    )


def erl_slow(e: ErlModel, x_p, x_q, v):
    p_s, p_t, q_s, q_t = erl_static_transient(e, v)
    return -x_p / e.t_p + p_s - p_t, -x_q / e.t_q + q_s - q_t


def erl_power(e: ErlModel, x_p, x_q, v):
    _, p_t, _, q_t = erl_static_transient(e, v)
    return x_p / e.t_p + p_t, x_q / e.t_q + q_t


# ----------------------------------------------------------------- static load
@dataclass(frozen=True)
class StaticLoad(_Device):
    """Exponential static load p = p (v/v0)^alpha; constant power by default."""

    id: str
    bus: int
    p: float = 0.0
    q: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    v0: float = 1.0

    def validate(self):
        _positive(self, "v0")


def load_power(ld: StaticLoad, v):
    r = v / ld.v0
    return ld.p * r ** ld.alpha, ld.q * r ** ld.beta


# ------------------------------------------------------------------------ ltc
@dataclass(frozen=True)
class LtcModel(_Device):
    id: str
    branch: str
    bus: int
    v0: Optional[float] = None
    d: float = 0.01
    dm: float = 0.00625
    m_min: float = 0.8
    m_max: float = 1.1
    delay_first: float = 20.0
    delay_next: float = 10.0

    def validate(self):
        _positive(self, "dm", "delay_first", "delay_next")
        if self.d < 0:
            raise ValidationError("must be >= 0", key=f"{self.id}.d")
        _ordered(self, "m_min", "m_max")


def ltc_rule(c: LtcModel, m, v):
    """Tap rule: returns the next tap ratio (unchanged inside the deadband or at a limit).

    Raising the ratio lowers the controlled voltage, so the ratio goes up
    when the voltage is above the band and down when it is below.
    """
    slack = 1e-9 * c.dm
    if v > c.v0 + c.d and m + c.dm <= c.m_max + slack:
        return m + c.dm
    if v < c.v0 - c.d and m - c.dm >= c.m_min - slack:
        return m - c.dm
    return m


DEVICE_KINDS = {
    "gen": GeneratorModel,
    "avr": AvrModel,
    "tg": TurbineGovernorModel,
    "oxl": OxlModel,
    "erl": ErlModel,
    "ltc": LtcModel,
    "load": StaticLoad,
}

# parameters computed during initialization; not accepted from documents
DERIVED_PARAMS = {
    "gen": ("p_m0", "v_f0"),
    "avr": ("v_ref0",),
    "tg": ("p_order",),
}
