"""Newton solvers, Jacobian blocks and constraint-manifold classification.

A point of the constraint manifold is classified from the block matrix::

    [[D_x f, D_y f],
     [D_x g, D_y g]]

It is *singular* when that matrix loses rank, of *type k* when k of its
eigenvalues lie in the open right half-plane, and a member of Gamma_s when
D_y g is nonsingular and the reduced matrix
``D_x f - D_y f D_y g^{-1} D_x g`` is Hurwitz.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import MaxIterations, NoConvergence, SingularDyg, SingularJacobian
from .layout import PartitionedState
from .model import fd_jacobian

PIVOT_TOL = 1e-12
SINGULAR_RTOL = 1e-8
STABILITY_MARGIN = -1e-9
MAX_HALVINGS = 8


def lu_factor_checked(A, pivot_tol=PIVOT_TOL, exc=SingularJacobian):
    """LU factorization that raises ``exc`` when a pivot is below ``pivot_tol``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return A, np.zeros(0, dtype=np.int32)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if not np.all(np.isfinite(lu)) or pivots.min() < pivot_tol:
        raise exc(f"pivot {pivots.min():.3e} below {pivot_tol:g}")
    return lu, piv


def lu_solve(factors, b):
    lu, piv = factors
    if lu.size == 0:
        return np.zeros(0)
    return sla.lu_solve((lu, piv), b, check_finite=False)


def _maxabs(r):
    return float(np.max(np.abs(r))) if r.size else 0.0


def newton(fun, u0, jac=None, tol=1e-10, max_iter=50, history=None):
    """Damped Newton iteration on ``fun(u) = 0``.

    Each step is halved up to eight times until the residual max-norm
    decreases. ``history`` (a list) receives the residual norm after every
    iterate, starting with the initial guess.
    """
    u = np.array(u0, dtype=float)
    r = np.asarray(fun(u), dtype=float)
    nr = _maxabs(r)
    if history is not None:
        history.append(nr)
    for _ in range(max_iter):
        if nr <= tol:
            return u
        J = jac(u) if jac is not None else fd_jacobian(fun, u, m=r.size)
        du = lu_solve(lu_factor_checked(J), -r)
        alpha = 1.0
        for _ in range(MAX_HALVINGS + 1):
            u_try = u + alpha * du
            r_try = np.asarray(fun(u_try), dtype=float)
            n_try = _maxabs(r_try)
            if np.isfinite(n_try) and n_try < nr:
                break
            alpha *= 0.5
        if not np.isfinite(n_try):
            raise MaxIterations("Newton iterate left the domain of the residual", residual=nr)
        u, r, nr = u_try, r_try, n_try
        if history is not None:
            history.append(nr)
    if nr <= tol:
        return u
    raise MaxIterations(f"no convergence in {max_iter} Newton steps (|r| = {nr:.3e})", residual=nr)


def _sizes(model):
    L = model.layout
    return len(L.zc), len(L.x), len(L.y)


def solve_algebraic(model, s: PartitionedState, y_guess=None, tol=1e-10, t=0.0,
                    max_iter=50, history=None) -> np.ndarray:
    """Solve g(zc, zd, x, y) = 0 for y with zc, zd, x fixed."""
    s.check(model.layout)
    nzc, nx, ny = _sizes(model)
    y0 = np.array(s.y if y_guess is None else y_guess, dtype=float)
    zc, zd, x = s.zc, s.zd, s.x

    def fun(y):
        return model.eval_all(t, zc, zd, x, y)[2]

    def jac(y):
        return model.eval_jacobian(t, zc, zd, x, y)[nzc + nx:, nzc + nx:]

    return newton(fun, y0, jac, tol=tol, max_iter=max_iter, history=history)


def solve_equilibrium_fast(model, zc, zd, guess, tol=1e-10, t=0.0, max_iter=50, history=None):
    """Equilibrium (x, y) = l(zc, zd) of the frozen transient model.

    ``guess`` is an (x, y) pair. Raises :class:`MaxIterations` or
    :class:`SingularJacobian` (the point is on or near the singular set).
    """
    nzc, nx, ny = _sizes(model)
    zc = np.asarray(zc, dtype=float)
    zd = np.asarray(zd, dtype=float)
    u0 = np.concatenate([np.asarray(guess[0], float), np.asarray(guess[1], float)])

    def fun(u):
        _, f, g = model.eval_all(t, zc, zd, u[:nx], u[nx:])
        return np.concatenate([f, g])

    def jac(u):
        return model.eval_jacobian(t, zc, zd, u[:nx], u[nx:])[nzc:, nzc:]

    u = newton(fun, u0, jac, tol=tol, max_iter=max_iter, history=history)
    return u[:nx], u[nx:]


@dataclass(frozen=True)
class JacobianBlocks:
    D_xf: np.ndarray
    D_yf: np.ndarray
    D_xg: np.ndarray
    D_yg: np.ndarray
    D_zc_hc: np.ndarray = field(default=None, repr=False)
    D_x_hc: np.ndarray = field(default=None, repr=False)
    D_y_hc: np.ndarray = field(default=None, repr=False)
    D_zc_f: np.ndarray = field(default=None, repr=False)
    D_zc_g: np.ndarray = field(default=None, repr=False)
    point: PartitionedState | None = field(default=None, repr=False)

    @property
    def block(self) -> np.ndarray:
        return np.block([[self.D_xf, self.D_yf], [self.D_xg, self.D_yg]])

    @classmethod
    def from_arrays(cls, D_xf, D_yf, D_xg, D_yg):
        return cls(*(np.atleast_2d(np.asarray(a, dtype=float)) for a in (D_xf, D_yf, D_xg, D_yg)))


def jacobian_blocks(model, s: PartitionedState, t=0.0) -> JacobianBlocks:
    """Finite-difference Jacobian blocks at ``s``."""
    s.check(model.layout)
    nzc, nx, ny = _sizes(model)
    J = model.eval_jacobian(t, s.zc, s.zd, s.x, s.y)
    iz = slice(0, nzc)
    ix = slice(nzc, nzc + nx)
    iy = slice(nzc + nx, nzc + nx + ny)
    return JacobianBlocks(
        D_xf=J[ix, ix], D_yf=J[ix, iy], D_xg=J[iy, ix], D_yg=J[iy, iy],
        D_zc_hc=J[iz, iz], D_x_hc=J[iz, ix], D_y_hc=J[iz, iy],
        D_zc_f=J[ix, iz], D_zc_g=J[iy, iz], point=s,
    )


def reduced_jacobian(b: JacobianBlocks) -> np.ndarray:
    """D_x f - D_y f D_y g^{-1} D_x g."""
    if b.D_yg.size == 0:
        return np.array(b.D_xf, dtype=float)
    factors = lu_factor_checked(b.D_yg, exc=SingularDyg)
    return b.D_xf - b.D_yf @ lu_solve(factors, b.D_xg)


def eigenvalues(m, vectors=False):
    """Full spectrum of a dense square matrix (LAPACK ``geev``).

    With ``vectors=True`` returns ``(values, right_vectors)``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("eigenvalues needs a square matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    try:
        if vectors:
            w, v = np.linalg.eig(m)
            return w.astype(complex), v.astype(complex)
        return np.linalg.eigvals(m).astype(complex)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc


@dataclass(frozen=True)
class ManifoldPointClass:
    singular: bool
    type_k: int
    gamma_s_member: bool
    reduced_spectrum: tuple
    margin: float
    det_sign: int = 0
    dyg_singular: bool = False

    def to_dict(self):
        return {
            "singular": self.singular, "type_k": self.type_k,
            "gamma_s_member": self.gamma_s_member, "margin": self.margin,
            "reduced_spectrum": [[z.real, z.imag] for z in self.reduced_spectrum],
        }


def _rank_deficient(A):
    if A.size == 0:
        return False
    sv = np.linalg.svd(A, compute_uv=False)
    return bool(sv[0] == 0.0 or sv[-1] < SINGULAR_RTOL * sv[0])


def classify_point(b: JacobianBlocks) -> ManifoldPointClass:
    """Singularity, type-k and Gamma_s membership of one manifold point."""
    A = b.block
    singular = _rank_deficient(A)
    type_k = int(np.sum(eigenvalues(A).real > 0)) if A.size else 0
    if A.size:
        sign, _ = np.linalg.slogdet(A)
        det_sign = int(np.sign(sign))
    else:
        det_sign = 1
    dyg_singular = _rank_deficient(b.D_yg)
    spectrum = ()
    margin = float("nan")
    if not dyg_singular:
        try:
            R = reduced_jacobian(b)
        except SingularDyg:
            dyg_singular = True
        else:
            spectrum = tuple(complex(z) for z in eigenvalues(R)) if R.size else ()
            margin = max((z.real for z in spectrum), default=float("-inf"))
    member = (not singular) and (not dyg_singular) and margin < STABILITY_MARGIN
    return ManifoldPointClass(singular=singular, type_k=type_k, gamma_s_member=bool(member),
                              reduced_spectrum=spectrum, margin=margin, det_sign=det_sign,
                              dyg_singular=dyg_singular)
