"""Stability regions of the transient model.

Membership of a point in the region of attraction of a SEP is decided by
simulating the frozen transient model from it: entering a small ball around
the SEP with the fast vector field at rest means *inside*; divergence, a
singular point or convergence elsewhere means *outside*; anything else is
*undecided*.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .algebra import (ManifoldPointClass, classify_point, jacobian_blocks, solve_algebraic,
                      solve_equilibrium_fast)
from .errors import LayoutError, QSSLabError, SingularJacobian, ValidationError
from .layout import PartitionedState
from .sim.engine import SimConfig, simulate_transient

INSIDE, OUTSIDE, UNDECIDED, SINGULAR = "inside", "outside", "undecided", "singular"
SETTLE_CONSTANTS = 25.0
HORIZON_STRETCH = 10.0


@dataclass(frozen=True)
class Sep:
    """Equilibrium of a transient model and its classification."""

    zc: np.ndarray
    zd: np.ndarray
    x: np.ndarray
    y: np.ndarray
    cls: ManifoldPointClass

    @property
    def stable(self) -> bool:
        return self.cls.gamma_s_member


@dataclass(frozen=True)
class BasinQuery:
    zc: np.ndarray
    zd: np.ndarray
    x: np.ndarray
    y: np.ndarray
    horizon: float = 60.0
    rho: float = 1e-4
    escape: float = 1e3

    def __post_init__(self):
        if not self.rho > 0:
            raise ValidationError("must be > 0", key="rho")
        if not self.horizon > 0:
            raise ValidationError("must be > 0", key="horizon")


def find_transient_sep(model, zc, zd, guess, tol=1e-10, t=0.0) -> Sep:
    """Equilibrium l(zc, zd) near ``guess`` = (x, y), with its classification."""
    x, y = solve_equilibrium_fast(model, zc, zd, guess, tol=tol, t=t)
    s = PartitionedState(model.layout, zc=zc, zd=zd, x=x, y=y)
    return Sep(s.zc, s.zd, s.x, s.y, classify_point(jacobian_blocks(model, s, t)))


def _distance(x, y, sep):
    parts = [np.abs(x - sep.x), np.abs(y - sep.y)]
    return max((float(p.max()) for p in parts if p.size), default=0.0)


def basin_membership(model, q: BasinQuery, sep: Sep, cfg: SimConfig | None = None, t0=0.0) -> str:
    """Classify ``q`` as inside, outside or undecided for the region of ``sep``.

    The simulated horizon is ``q.horizon``, stretched up to ten-fold when the
    slowest decay rate of ``sep`` needs longer to settle.
    """
    cfg = cfg or SimConfig()
    horizon = q.horizon
    margin = sep.cls.margin
    if np.isfinite(margin) and margin < 0:
        # weakly damped SEPs need about 25 time constants to settle below the tolerances
        horizon = max(horizon, min(HORIZON_STRETCH * q.horizon, SETTLE_CONSTANTS / -margin))
    cfg = cfg.with_(transient_horizon=horizon, divergence_bound=q.escape)
    try:
        traj = simulate_transient(model, q.zc, q.zd, (q.x, q.y), cfg, t0=t0, detect_limit_cycle=True)
    except SingularJacobian:
        return OUTSIDE
    except QSSLabError:
        return UNDECIDED
    if traj.termination in ("diverged", "singular", "limit-cycle"):
        return OUTSIDE
    if traj.termination == "solver-failure":
        return UNDECIDED
    end = _distance(traj.final.x, traj.final.y, sep)
    _, f, _ = model.eval_all(t0, traj.final.zc, traj.final.zd, traj.final.x, traj.final.y)
    at_rest = f.size == 0 or float(np.max(np.abs(f))) < cfg.converge_tol
    if end <= q.rho and at_rest:
        return INSIDE
    if traj.termination == "converged" and end > 10 * q.rho:
        return OUTSIDE
    return UNDECIDED


@dataclass(frozen=True)
class BasinSliceGrid:
    """Classified grid over one or two fast-variable axes.

    ``classes`` has shape ``resolution``; entry ``[i, j]`` belongs to the
    cell centred at ``(centers[0][i], centers[1][j])``.
    """

    axes: tuple
    bounds: tuple
    resolution: tuple
    centers: tuple
    classes: np.ndarray
    sep_point: tuple
    sep_cell: tuple | None
    query_point: tuple | None = None
    query_cell: tuple | None = None
    query_class: str | None = None
    meta: dict = field(default_factory=dict)

    def cell_of(self, point):
        idx = []
        for k, (lo, hi) in enumerate(self._pairs()):
            n = self.resolution[k]
            if not lo <= point[k] <= hi:
                return None
            i = int((point[k] - lo) / (hi - lo) * n)
            idx.append(min(i, n - 1))
        return tuple(idx)

    def _pairs(self):
        b = self.bounds
        return [(b[2 * k], b[2 * k + 1]) for k in range(len(self.axes))]

    def rows(self):
        """(axis values..., class) per cell in C order."""
        out = []
        for idx in np.ndindex(*self.resolution):
            vals = tuple(float(self.centers[k][i]) for k, i in enumerate(idx))
            out.append(vals + (str(self.classes[idx]),))
        return out


def _fast_axes(model, axes):
    idx = []
    for name in axes:
        if name not in model.layout or model.layout.locate(name)[0] != "x":
            raise LayoutError(f"{name!r} is not a fast variable; valid choices: {', '.join(model.layout.x)}")
        idx.append(model.layout.locate(name)[1])
    if len(set(idx)) != len(idx):
        raise LayoutError("axes must be distinct")
    if not 1 <= len(idx) <= 2:
        raise LayoutError("one or two axes are required")
    return idx


def sample_basin_slice(model, zc, zd, sep: Sep, axes, bounds, resolution, cfg: SimConfig | None = None,
                       rho=1e-4, escape=1e3, horizon=None, threads=1, query=None, t0=0.0) -> BasinSliceGrid:
    """Classify every cell centre of a 1-D or 2-D slice through ``sep``.

    Coordinates other than the axes stay at their SEP values; the algebraic
    variables are re-solved at each centre. ``query`` is an optional full
    (x, y) point whose cell and own classification are reported.
    """
    axes = tuple(axes)
    idx = _fast_axes(model, axes)
    resolution = tuple(int(r) for r in resolution)
    bounds = tuple(float(b) for b in bounds)
    if len(resolution) != len(axes) or len(bounds) != 2 * len(axes):
        raise ValidationError("need one resolution and two bounds per axis", key="resolution")
    if any(r < 1 for r in resolution):
        raise ValidationError("must be >= 1", key="resolution")
    for k in range(len(axes)):
        if not bounds[2 * k] < bounds[2 * k + 1]:
            raise ValidationError("lower bound must be below upper bound", key="bounds")
    cfg = cfg or SimConfig()
    horizon = cfg.transient_horizon if horizon is None else horizon
    centers = tuple(
        bounds[2 * k] + (np.arange(resolution[k]) + 0.5) * (bounds[2 * k + 1] - bounds[2 * k]) / resolution[k]
        for k in range(len(axes)))
    cells = list(np.ndindex(*resolution))

    def classify(cell):
        x = np.array(sep.x, dtype=float)
        for k, i in enumerate(cell):
            x[idx[k]] = centers[k][i]
        try:
            s = PartitionedState(model.layout, zc=sep.zc, zd=sep.zd, x=x, y=sep.y)
            y = solve_algebraic(model, s, tol=cfg.alg_tol, t=t0)
            q = BasinQuery(sep.zc, sep.zd, x, y, horizon=horizon, rho=rho, escape=escape)
            return basin_membership(model, q, sep, cfg, t0=t0)
        except SingularJacobian:
            return SINGULAR
        except QSSLabError:
            return UNDECIDED

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            labels = list(pool.map(classify, cells))
    else:
        labels = [classify(c) for c in cells]
    classes = np.empty(resolution, dtype=object)
    for cell, lab in zip(cells, labels):
        classes[cell] = lab
    grid = BasinSliceGrid(axes=axes, bounds=bounds, resolution=resolution, centers=centers,
                          classes=classes, sep_point=tuple(float(sep.x[i]) for i in idx), sep_cell=None)
    object.__setattr__(grid, "sep_cell", grid.cell_of(grid.sep_point))
    if query is not None:
        qx, qy = query
        qpoint = tuple(float(qx[i]) for i in idx)
        qclass = basin_membership(model, BasinQuery(sep.zc, sep.zd, qx, qy, horizon=horizon, rho=rho,
                                                    escape=escape), sep, cfg, t0=t0)
        object.__setattr__(grid, "query_point", qpoint)
        object.__setattr__(grid, "query_cell", grid.cell_of(qpoint))
        object.__setattr__(grid, "query_class", qclass)
    return grid
