"""Small synthetic models with known answers.

Every builder returns ``(model, init)``. Scenario documents may name one of
the entries of :data:`FIXTURES` instead of describing a power system.
"""
from __future__ import annotations

import numpy as np

from .layout import Layout, PartitionedState
from .model import FunctionModel


def linear_two_timescale(z0=1.0, x0=0.0):
    """z' = -z + x, eps x' = -x + z (eps applied by the integrator)."""
    L = Layout(zc=["z"], x=["x"])

    def jac(t, zc, zd, x, y):
        return np.array([[-1.0, 1.0], [1.0, -1.0]])

    model = FunctionModel(
        L,
        hc=lambda t, zc, zd, x, y: -zc + x,
        f=lambda t, zc, zd, x, y: -x + zc,
        jac=jac, name="linear-two-timescale")
    return model, PartitionedState(L, zc=[z0], zd=[], x=[x0], y=[])


def cubic(x0=0.5):
    """x' = -x (x^2 - 1): stable roots at +-1, unstable root at 0."""
    L = Layout(x=["x"])
    model = FunctionModel(
        L,
        f=lambda t, zc, zd, x, y: -x * (x * x - 1.0),
        jac=lambda t, zc, zd, x, y: np.array([[1.0 - 3.0 * x[0] ** 2]]),
        name="cubic")
    return model, PartitionedState(L, zc=[], zd=[], x=[x0], y=[])


def fold_crossing(rate=0.07, z0=0.0):
    """z' = rate, x' = -x + y, 0 = y^2 - (z - 1) y.

    Along the branch y = 0 the algebraic Jacobian is -(z - 1); it vanishes
    at z = 1, reached at t = (1 - z0) / rate.
    """
    L = Layout(zc=["z"], x=["x"], y=["y"])

    def jac(t, zc, zd, x, y):
        z, yy = zc[0], y[0]
        return np.array([[0.0, 0.0, 0.0],
                         [0.0, -1.0, 1.0],
                         [-yy, 0.0, 2.0 * yy - (z - 1.0)]])

    model = FunctionModel(
        L,
        hc=lambda t, zc, zd, x, y: np.array([rate]),
        f=lambda t, zc, zd, x, y: -x + y,
        g=lambda t, zc, zd, x, y: y * y - (zc - 1.0) * y,
        jac=jac, name="fold-crossing")
    return model, PartitionedState(L, zc=[z0], zd=[], x=[0.0], y=[0.0])


def static_pair(z0=1.0):
    """z' = 0, x' = -x + z: long-term and QSS runs coincide."""
    L = Layout(zc=["z"], x=["x"])
    model = FunctionModel(
        L,
        hc=lambda t, zc, zd, x, y: np.zeros(1),
        f=lambda t, zc, zd, x, y: -x + zc,
        jac=lambda t, zc, zd, x, y: np.array([[0.0, 0.0], [1.0, -1.0]]),
        name="static-pair")
    return model, PartitionedState(L, zc=[z0], zd=[], x=[z0], y=[])


def linear_dae(A, B, C, D, name="linear-dae"):
    """x' = A x + B y, 0 = C x + D y with no slow variables."""
    A, B, C, D = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, C, D))
    nx, ny = A.shape[0], D.shape[0]
    L = Layout(x=[f"x{i}" for i in range(nx)], y=[f"y{i}" for i in range(ny)])
    J = np.block([[A, B], [C, D]])
    model = FunctionModel(
        L,
        f=lambda t, zc, zd, x, y: A @ x + B @ y,
        g=lambda t, zc, zd, x, y: C @ x + D @ y,
        jac=lambda t, zc, zd, x, y: J.copy(), name=name)
    return model, PartitionedState(L, zc=[], zd=[], x=np.zeros(nx), y=np.zeros(ny))


def random_linear_dae(rng, nx=None, ny=None, margin=None):
    """Random linear DAE with well-conditioned D and a prescribed stability margin.

    The fast matrix is shifted so that the rightmost eigenvalue of the
    reduced matrix has real part ``margin`` (random in +-[0.1, 1] when not
    given). Returns ``(model, init, (A, B, C, D))``.
    """
    nx = int(rng.integers(1, 9)) if nx is None else nx
    ny = int(rng.integers(1, 7)) if ny is None else ny
    A = rng.standard_normal((nx, nx))
    B = rng.standard_normal((nx, ny))
    C = rng.standard_normal((ny, nx))
    while True:
        D = rng.standard_normal((ny, ny)) + 2.0 * np.eye(ny)
        if np.linalg.cond(D) < 1e3:
            break
    if margin is None:
        margin = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 1.0))
    R = A - B @ np.linalg.solve(D, C)
    A = A - (np.max(np.linalg.eigvals(R).real) - margin) * np.eye(nx)
    model, init = linear_dae(A, B, C, D)
    return model, init, (A, B, C, D)


FIXTURES = {
    "linear-two-timescale": linear_two_timescale,
    "cubic": cubic,
    "fold-crossing": fold_crossing,
    "static-pair": static_pair,
}
