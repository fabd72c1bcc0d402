"""Generic hybrid DAE model interface.

A model exposes the four residual families of the long-term model::

    zc' = h_c(zc, zd, x, y)          slow continuous
    zd+ = h_d(zc, zd, x, y)          discrete update
    x'  = f(zc, zd, x, y)            fast
    0   = g(zc, zd, x, y)            algebraic

through :meth:`DynamicModel.eval_all` (continuous parts) and
:meth:`DynamicModel.eval_discrete_update`. The solvers in
:mod:`qsslab.algebra` and the integrators in :mod:`qsslab.sim` only rely on
this interface, so small synthetic fixtures and the power-system model are
interchangeable.
"""
from __future__ import annotations

import numpy as np

from .errors import NonFiniteEntry
from .layout import Layout, PartitionedState


def fd_steps(u: np.ndarray) -> np.ndarray:
    """Per-variable central-difference steps max(1e-6, 1e-6 |u_i|)."""
    return np.maximum(1e-6, 1e-6 * np.abs(u))


def fd_jacobian(fun, u: np.ndarray, m: int | None = None) -> np.ndarray:
    """Central finite-difference Jacobian of ``fun`` at ``u``."""
    u = np.asarray(u, dtype=float)
    n = u.size
    steps = fd_steps(u)
    J = None
    for j in range(n):
        up = u.copy()
        um = u.copy()
        up[j] += steps[j]
        um[j] -= steps[j]
        rp = fun(up)
        rm = fun(um)
        if J is None:
            J = np.empty((rp.size if m is None else m, n))
        J[:, j] = (rp - rm) / (up[j] - um[j])
    if J is None:
        J = np.empty((0 if m is None else m, 0))
    if not np.all(np.isfinite(J)):
        raise NonFiniteEntry("finite-difference Jacobian has non-finite entries")
    return J


class DynamicModel:
    """Base class; subclasses set ``layout`` and implement :meth:`eval_all`."""

    layout: Layout
    name = "model"

    # -- continuous residuals -------------------------------------------
    def eval_all(self, t, zc, zd, x, y):
        """Return (h_c, f, g) at the given point."""
        raise NotImplementedError

    def eval_jacobian(self, t, zc, zd, x, y) -> np.ndarray:
        """Jacobian of (h_c, f, g) with respect to (zc, x, y).

        Rows and columns follow the order zc, x, y; zd is a parameter.
        """
        nzc, nx = len(zc), len(x)
        zd = np.asarray(zd, dtype=float)

        def stacked(u):
            return np.concatenate(self.eval_all(t, u[:nzc], zd, u[nzc:nzc + nx], u[nzc + nx:]))

        u0 = np.concatenate([zc, x, y]).astype(float)
        return fd_jacobian(stacked, u0, m=u0.size)

    # -- discrete dynamics -------------------------------------------------
    def init_timers(self, state: PartitionedState, t: float):
        return ()

    def eval_discrete_update(self, state: PartitionedState, timers, t: float):
        """Return (new zd, fired events, new timers)."""
        return np.array(state.zd), [], timers

    def without_discrete(self) -> "DynamicModel":
        """The same model with z_d frozen."""
        return self

    @property
    def has_discrete(self) -> bool:
        return False

    def discrete_pending(self, timers, state=None) -> bool:
        """True while a discrete update is scheduled that could still change zd."""
        return False

    # -- metadata used by the integrators --------------------------------
    def fast_time_constant(self) -> float:
        return 1.0

    def angle_spread(self, x, y) -> float:
        """Largest separation among rotor/reference angles (0 if none)."""
        return 0.0

    def wrap_fast(self, x: np.ndarray) -> np.ndarray:
        """Fast state with angle-like entries reduced modulo 2*pi."""
        return x

    def make_stepper(self, mode: str, eps: float, tol: float):
        from .sim.stepper import PyStepper

        return PyStepper(self, mode, eps, tol)


class FunctionModel(DynamicModel):
    """Model assembled from Python callables, used for synthetic fixtures.

    Each callable has signature ``fn(t, zc, zd, x, y) -> array``; missing
    ones return empty vectors. ``jac`` optionally returns the analytic
    Jacobian of (h_c, f, g) with respect to (zc, x, y).
    """

    def __init__(self, layout: Layout, hc=None, f=None, g=None, jac=None,
                 discrete=None, name="fixture", fast_time_constant=1.0):
        self.layout = layout
        self._hc, self._f, self._g, self._jac = hc, f, g, jac
        self._discrete = discrete
        self.name = name
        self._tau = fast_time_constant

    def eval_all(self, t, zc, zd, x, y):
        empty = np.zeros(0)
        hc = np.asarray(self._hc(t, zc, zd, x, y), float) if self._hc else empty
        f = np.asarray(self._f(t, zc, zd, x, y), float) if self._f else empty
        g = np.asarray(self._g(t, zc, zd, x, y), float) if self._g else empty
        return hc.reshape(-1), f.reshape(-1), g.reshape(-1)

    def eval_jacobian(self, t, zc, zd, x, y):
        if self._jac is not None:
            return np.asarray(self._jac(t, zc, zd, x, y), dtype=float)
        return super().eval_jacobian(t, zc, zd, x, y)

    def eval_discrete_update(self, state, timers, t):
        if self._discrete is None:
            return super().eval_discrete_update(state, timers, t)
        return self._discrete(state, timers, t)

    def init_timers(self, state, t):
        return 0.0 if self._discrete is not None else ()

    @property
    def has_discrete(self):
        return self._discrete is not None

    def without_discrete(self):
        if self._discrete is None:
            return self
        return FunctionModel(self.layout, self._hc, self._f, self._g, self._jac,
                             None, self.name, self._tau)

    def fast_time_constant(self):
        return self._tau
