"""Buses, branches and the bus admittance matrix."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError

BUS_TYPES = ("pq", "pv", "slack")


@dataclass(frozen=True)
class Bus:
    id: int
    v: float = 1.0
    theta: float = 0.0
    type: str = "pq"
    g_sh: float = 0.0
    b_sh: float = 0.0

    def validate(self):
        if self.type not in BUS_TYPES:
            raise ValidationError(f"bus type must be one of {BUS_TYPES}", key=f"bus{self.id}.type")
        if not self.v > 0:
            raise ValidationError("must be > 0", key=f"bus{self.id}.v")


@dataclass(frozen=True)
class Branch:
    """Pi-model branch with an off-nominal tap ratio on the from side."""

    id: str
    from_bus: int
    to_bus: int
    r: float = 0.0
    x: float = 0.1
    b: float = 0.0
    tap: float = 1.0

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)

    def validate(self):
        if self.r == 0 and self.x == 0:
            raise ValidationError("zero series impedance", key=f"{self.id}.x")
        if not self.tap > 0:
            raise ValidationError("must be > 0", key=f"{self.id}.tap")


def branch_stamp(br: Branch, tap: float | None = None):
    """Return (Yff, Yft, Ytf, Ytt) for a branch at the given tap ratio."""
    m = br.tap if tap is None else tap
    ys = br.series_admittance
    ysh = 0.5j * br.b
    return (ys + ysh) / m**2, -ys / m, -ys / m, ys + ysh


@dataclass(frozen=True)
class Network:
    buses: tuple
    branches: tuple
    _pos: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        pos = {}
        for i, bus in enumerate(self.buses):
            if bus.id in pos:
                raise ValidationError("duplicate bus id", key=f"bus{bus.id}")
            pos[bus.id] = i
        object.__setattr__(self, "_pos", pos)
        seen = set()
        for br in self.branches:
            if br.id in seen:
                raise ValidationError("duplicate branch id", key=br.id)
            seen.add(br.id)
            for end in (br.from_bus, br.to_bus):
                if end not in pos:
                    raise ValidationError(f"references unknown bus {end}", key=br.id)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, bus_id: int) -> int:
        try:
            return self._pos[bus_id]
        except KeyError:
            raise ValidationError(f"unknown bus {bus_id}", key=f"bus{bus_id}") from None

    def branch(self, branch_id: str) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise ValidationError("unknown branch", key=branch_id)

    def admittance(self, taps: dict | None = None, exclude=()) -> np.ndarray:
        """Dense bus admittance matrix.

        ``taps`` overrides tap ratios by branch id; branches listed in
        ``exclude`` are left out (their stamps are added elsewhere).
        """
        taps = taps or {}
        n = self.n_bus
        Y = np.zeros((n, n), dtype=complex)
        for k, bus in enumerate(self.buses):
            Y[k, k] += complex(bus.g_sh, bus.b_sh)
        for br in self.branches:
            if br.id in exclude:
                continue
            i, j = self._pos[br.from_bus], self._pos[br.to_bus]
            yff, yft, ytf, ytt = branch_stamp(br, taps.get(br.id))
            Y[i, i] += yff
            Y[i, j] += yft
            Y[j, i] += ytf
            Y[j, j] += ytt
        return Y

    def without_branch(self, branch_id: str) -> "Network":
        self.branch(branch_id)
        return Network(self.buses, tuple(b for b in self.branches if b.id != branch_id))


def injections(Y: np.ndarray, v: np.ndarray, theta: np.ndarray):
    """Complex power flowing from each bus into the network: (P, Q)."""
    V = v * np.exp(1j * theta)
    S = V * np.conj(Y @ V)
    return S.real, S.imag
