"""Implicit-trapezoid step with a simultaneous Newton solve.

One step from (zc_n, x_n, y_n) at t to t + h solves, for u = (zc, x, y)::

    zc - zc_n - h/2 (h_c + h_c,n)          = 0     (omitted in transient mode)
    x  - x_n  - h/(2 eps) (f + f_n)        = 0     (f = 0 in QSS mode)
    g                                      = 0

The Newton matrix is reused across steps (chord iteration) and rebuilt when
the contraction is poor, when the step size changes, or after
:meth:`PyStepper.invalidate` (called at every discrete event).
"""
from __future__ import annotations

import numpy as np

from ..algebra import lu_factor_checked, lu_solve
from ..errors import NoConvergence

MODES = ("transient", "longterm", "qss")


class PyStepper:
    backend = "python"

    def __init__(self, model, mode, eps=1.0, tol=1e-8, alg_tol=1e-10, max_iter=10):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not eps > 0:
            raise ValueError("eps must be > 0")
        self.model = model
        self.mode = mode
        self.eps = float(eps)
        self.tol = float(tol)
        self.alg_tol = float(alg_tol)
        self.max_iter = max_iter
        L = model.layout
        self.nzc, self.nx, self.ny = len(L.zc), len(L.x), len(L.y)
        self.slow = mode != "transient"
        self.nslow = self.nzc if self.slow else 0
        self.n = self.nslow + self.nx + self.ny
        self.last_eval = None
        self.jacobian_count = 0
        self.invalidate()

    def invalidate(self):
        self._lu = None
        self._lu_h = None
        self._cache = None

    # -------------------------------------------------------------- pieces
    def _eval(self, t, zc, zd, x, y):
        hc, f, g = self.model.eval_all(t, zc, zd, x, y)
        return np.asarray(hc, float), np.asarray(f, float), np.asarray(g, float)

    def _split(self, u, zc_frozen):
        ns, nx = self.nslow, self.nx
        zc = u[:ns] if self.slow else zc_frozen
        return zc, u[ns:ns + nx], u[ns + nx:]

    def _residual(self, t1, h, u, zd, zc_n, x_n, hc_n, f_n):
        zc, x, y = self._split(u, zc_n)
        hc, f, g = self._eval(t1, zc, zd, x, y)
        r = np.empty(self.n)
        ns, nx = self.nslow, self.nx
        if self.slow:
            r[:ns] = zc - zc_n - 0.5 * h * (hc + hc_n)
        if self.mode == "qss":
            r[ns:ns + nx] = f
        else:
            r[ns:ns + nx] = x - x_n - 0.5 * h / self.eps * (f + f_n)
        r[ns + nx:] = g
        return r, (hc, f, g)

    def newton_matrix(self, t1, h, u, zd, zc_frozen):
        zc, x, y = self._split(u, zc_frozen)
        J = np.array(self.model.eval_jacobian(t1, zc, zd, x, y), dtype=float)
        self.jacobian_count += 1
        if not self.slow:
            J = J[self.nzc:, self.nzc:]
        ns, nx = self.nslow, self.nx
        A = np.empty_like(J)
        if self.slow:
            A[:ns] = -0.5 * h * J[:ns]
            A[:ns, :ns] += np.eye(ns)
        if self.mode == "qss":
            A[ns:ns + nx] = J[ns:ns + nx]
        else:
            A[ns:ns + nx] = -0.5 * h / self.eps * J[ns:ns + nx]
            A[ns:ns + nx, ns:ns + nx] += np.eye(nx)
        A[ns + nx:] = J[ns + nx:]
        return A

    def _converged(self, r):
        ng = self.n - self.ny
        ok_diff = ng == 0 or np.max(np.abs(r[:ng])) <= self.tol
        ok_alg = self.ny == 0 or np.max(np.abs(r[ng:])) <= self.alg_tol
        return ok_diff and ok_alg

    # ---------------------------------------------------------------- step
    def step(self, t, h, zc, zd, x, y):
        """Advance one step; returns (zc, x, y) at t + h.

        Raises :class:`NoConvergence` when Newton fails with a fresh matrix
        and :class:`SingularJacobian` on a vanishing pivot.
        """
        zc = np.asarray(zc, float)
        zd = np.asarray(zd, float)
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        c = self._cache
        if c is not None and c[0] == t and np.array_equal(c[1], zc) and np.array_equal(c[2], x) \
                and np.array_equal(c[3], y) and np.array_equal(c[4], zd):
            hc_n, f_n = c[5], c[6]
        else:
            hc_n, f_n, _ = self._eval(t, zc, zd, x, y)
        t1 = t + h
        u0 = np.concatenate([zc, x, y]) if self.slow else np.concatenate([x, y])
        for attempt in range(2):
            if self._lu is None or self._lu_h != h:
                self._lu = lu_factor_checked(self.newton_matrix(t1, h, u0, zd, zc))
                self._lu_h = h
                fresh = True
            else:
                fresh = False
            u = u0.copy()
            r, parts = self._residual(t1, h, u, zd, zc, x, hc_n, f_n)
            nr = np.max(np.abs(r)) if r.size else 0.0
            # at least one correction: a residual of order h * rate can sit
            # below the tolerance at the starting point and freeze the state
            ok = False
            for _ in range(self.max_iter):
                if ok or not np.isfinite(nr):
                    break
                u = u - lu_solve(self._lu, r)
                r, parts = self._residual(t1, h, u, zd, zc, x, hc_n, f_n)
                n_new = np.max(np.abs(r))
                ok = self._converged(r)
                if not ok and not n_new < 0.5 * nr:
                    nr = n_new
                    break
                nr = n_new
            if ok and np.isfinite(nr):
                zc1, x1, y1 = self._split(u, zc)
                zc1 = np.array(zc1)
                self.last_eval = parts
                self._cache = (t1, zc1, x1, y1, zd, parts[0], parts[1])
                return zc1, x1, y1
            self._lu = None
            if fresh:
                break
        raise NoConvergence(f"Newton failed at t = {t1:.6g} with h = {h:.3g} (|r| = {nr:.3e})")
