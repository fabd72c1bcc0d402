"""Variable layout and partitioned states.

Every scalar of a model belongs to exactly one of four partitions:

* ``zc`` -- slow continuous states,
* ``zd`` -- slow discrete states,
* ``x``  -- fast states,
* ``y``  -- algebraic variables.

Names follow the ``device.variable`` convention, e.g. ``gen1.delta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LayoutError

PARTS = ("zc", "zd", "x", "y")


@dataclass(frozen=True)
class Layout:
    zc: tuple[str, ...] = ()
    zd: tuple[str, ...] = ()
    x: tuple[str, ...] = ()
    y: tuple[str, ...] = ()
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        for part in PARTS:
            object.__setattr__(self, part, tuple(getattr(self, part)))
        index = {}
        for part in PARTS:
            for i, name in enumerate(getattr(self, part)):
                if name in index:
                    raise LayoutError(f"variable {name!r} appears twice in the layout")
                index[name] = (part, i)
        object.__setattr__(self, "_index", index)

    @property
    def sizes(self) -> dict:
        return {part: len(getattr(self, part)) for part in PARTS}

    @property
    def names(self) -> tuple[str, ...]:
        """All names in the canonical order zc, zd, x, y."""
        return self.zc + self.zd + self.x + self.y

    def locate(self, name: str) -> tuple[str, int]:
        try:
            return self._index[name]
        except KeyError:
            raise LayoutError(f"unknown variable {name!r}") from None

    def __contains__(self, name):
        return name in self._index

    def __len__(self):
        return len(self._index)


@dataclass(frozen=True)
class PartitionedState:
    """One point (zc, zd, x, y) of a model.

    Arrays are copied on construction and made read-only so that states can
    be shared between workers.
    """

    layout: Layout
    zc: np.ndarray
    zd: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        for part in PARTS:
            arr = np.array(getattr(self, part), dtype=float, copy=True).reshape(-1)
            expected = len(getattr(self.layout, part))
            if arr.size != expected:
                raise LayoutError(
                    f"partition {part} has {arr.size} entries, layout expects {expected}"
                )
            arr.flags.writeable = False
            object.__setattr__(self, part, arr)

    @classmethod
    def zeros(cls, layout: Layout) -> "PartitionedState":
        s = layout.sizes
        return cls(layout, np.zeros(s["zc"]), np.zeros(s["zd"]), np.zeros(s["x"]), np.zeros(s["y"]))

    def __getitem__(self, name: str) -> float:
        part, i = self.layout.locate(name)
        return float(getattr(self, part)[i])

    def replace(self, **parts) -> "PartitionedState":
        """Return a copy with some partitions (or named scalars) replaced."""
        arrays = {p: np.array(getattr(self, p)) for p in PARTS}
        for key, value in parts.items():
            if key in PARTS:
                arrays[key] = value
            else:
                part, i = self.layout.locate(key)
                arrays[part][i] = value
        return PartitionedState(self.layout, **arrays)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.zc, self.zd, self.x, self.y])

    def to_dict(self) -> dict:
        return dict(zip(self.layout.names, self.as_vector().tolist()))

    def check(self, layout: Layout):
        if layout != self.layout:
            raise LayoutError("state layout does not match the model layout")
