"""Scenario documents (JSON) and result files (CSV, JSON).

File formats
------------
trajectory CSV
    ``t_s,<name>,...`` with names ordered zc, zd, x, y as in the layout. When
    the run used ``epsilon_scale != 1`` a ``tau`` column (t times eps)
    follows ``t_s``.
events CSV
    ``t_s,device,old,new``.
grid CSV
    ``axis1,axis2,class`` (one axis column for 1-D slices).
report JSON
    The fields of :class:`qsslab.checker.VerdictReport`.

Floats are written with ``repr``, the shortest decimal string that reads
back to the same double.
"""
from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .checker import CHECKS
from .errors import ParseError, ValidationError
from .fixtures import FIXTURES
from .layout import PartitionedState
from .netmodel import devices as dv
from .netmodel.network import Branch, Bus, Network
from .netmodel.system import SystemModel
from .sim.engine import SimConfig

CHANGE_FIELDS = {
    "branch-outage": {"branch"},
    "load-step": {"device", "dp", "dq"},
    "parameter-set": {"device", "param", "value"},
}
TOP_KEYS = {"name", "system", "fixture", "contingency", "sim", "checks", "outputs", "delta", "backend"}
SYSTEM_KEYS = {"buses", "branches"} | set(dv.DEVICE_KINDS)


def _fields(cls):
    return [f.name for f in fields(cls)]


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ValidationError("must be an object", key=where)
    for k in obj:
        if k not in allowed:
            raise ValidationError(f"unknown key {k!r}", key=f"{where}.{k}" if where else k)


def _record(cls, data, where, drop=()):
    allowed = [n for n in _fields(cls) if n not in drop]
    _check_keys(data, set(allowed), where)
    try:
        obj = cls(**data)
    except TypeError as exc:
        raise ValidationError(str(exc), key=where) from None
    for name in allowed:
        v = getattr(obj, name)
        if name in ("id", "type", "branch", "gen") or v is None:
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError("must be a number", key=f"{where}.{name}")
        if isinstance(v, float) and not math.isfinite(v):
            raise ValidationError("must be finite", key=f"{where}.{name}")
    return obj


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario with all defaults filled in."""

    name: str
    system: SystemModel | None
    fixture: dict | None
    contingency: tuple
    sim: SimConfig
    checks: tuple
    outputs: dict
    delta: float
    document: dict = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        """The normalized document, defaults included."""
        return copy.deepcopy(self.document)

    def build(self):
        """Post-contingency model and its initial state at t = 0."""
        if self.fixture is not None:
            params = {k: v for k, v in self.fixture.items() if k != "name"}
            return FIXTURES[self.fixture["name"]](**params)
        model, state = self.system.initialize()
        for change in self.contingency:
            model = model.apply_change({k: v for k, v in change.items() if k != "time"})
        return model, state

    def base(self):
        """Pre-contingency model and equilibrium (system scenarios only)."""
        if self.system is None:
            return self.build()
        return self.system.initialize()


def _system_from_doc(sysdoc, backend=None):
    _check_keys(sysdoc, SYSTEM_KEYS, "system")
    buses = []
    for i, b in enumerate(sysdoc.get("buses", [])):
        buses.append(_record(Bus, b, f"system.buses[{i}]"))
    if not buses:
        raise ValidationError("at least one bus is required", key="system.buses")
    branches = [_record(Branch, b, f"system.branches[{i}]") for i, b in enumerate(sysdoc.get("branches", []))]
    groups = {}
    for kind, cls in dv.DEVICE_KINDS.items():
        drop = dv.DERIVED_PARAMS.get(kind, ())
        groups[kind] = [_record(cls, d, f"system.{kind}[{i}]", drop) for i, d in enumerate(sysdoc.get(kind, []))]
    return SystemModel(Network(buses, branches), gens=groups["gen"], avrs=groups["avr"], tgs=groups["tg"],
                       oxls=groups["oxl"], erls=groups["erl"], ltcs=groups["ltc"], loads=groups["load"],
                       backend=backend)


def _normalized_system(model: SystemModel):
    def rec(obj, drop=()):
        return {n: getattr(obj, n) for n in _fields(type(obj)) if n not in drop}

    out = {"buses": [rec(b) for b in model.network.buses],
           "branches": [rec(b) for b in model.network.branches]}
    for kind, attr in (("gen", "gens"), ("avr", "avrs"), ("tg", "tgs"), ("oxl", "oxls"),
                       ("erl", "erls"), ("ltc", "ltcs"), ("load", "loads")):
        out[kind] = [rec(d, dv.DERIVED_PARAMS.get(kind, ())) for d in getattr(model, attr)]
    return out


def parse_scenario(doc: dict, backend=None) -> ScenarioConfig:
    """Validate a scenario given as a Python mapping."""
    _check_keys(doc, TOP_KEYS, "")
    name = doc.get("name", "scenario")
    if ("system" in doc) == ("fixture" in doc):
        raise ValidationError("exactly one of 'system' or 'fixture' is required", key="system")
    backend = doc.get("backend", backend)
    if backend not in (None, "compiled", "python"):
        raise ValidationError("must be 'compiled' or 'python'", key="backend")
    simdoc = doc.get("sim", {})
    _check_keys(simdoc, set(SimConfig.field_names()), "sim")
    try:
        sim = SimConfig(**simdoc)
    except TypeError as exc:
        raise ValidationError(str(exc), key="sim") from None
    checks = tuple(doc.get("checks", CHECKS))
    for c in checks:
        if c not in CHECKS:
            raise ValidationError(f"unknown check {c!r}; valid: {', '.join(CHECKS)}", key="checks")
    delta = doc.get("delta", 1e-2)
    if not isinstance(delta, (int, float)) or not delta > 0:
        raise ValidationError("must be a positive number", key="delta")
    outputs = doc.get("outputs", {})
    if not isinstance(outputs, dict):
        raise ValidationError("must be an object", key="outputs")

    system = fixture = None
    contingency = []
    if "fixture" in doc:
        fx = doc["fixture"]
        fx = {"name": fx} if isinstance(fx, str) else dict(fx)
        if fx.get("name") not in FIXTURES:
            raise ValidationError(f"unknown fixture; valid: {', '.join(FIXTURES)}", key="fixture.name")
        try:
            FIXTURES[fx["name"]](**{k: v for k, v in fx.items() if k != "name"})
        except TypeError as exc:
            raise ValidationError(str(exc), key="fixture") from None
        fixture = fx
        if doc.get("contingency"):
            raise ValidationError("fixtures take no contingencies", key="contingency")
    else:
        system = _system_from_doc(doc["system"], backend)
        for i, ch in enumerate(doc.get("contingency", [])):
            where = f"contingency[{i}]"
            if not isinstance(ch, dict):
                raise ValidationError("must be an object", key=where)
            kind = ch.get("type")
            if kind not in CHANGE_FIELDS:
                raise ValidationError(f"type must be one of {', '.join(CHANGE_FIELDS)}", key=f"{where}.type")
            _check_keys(ch, CHANGE_FIELDS[kind] | {"type", "time"}, where)
            ch = {"time": 0.0, **ch}
            if ch["time"] != 0:
                raise ValidationError("only contingencies at t = 0 are supported", key=f"{where}.time")
            if kind == "load-step":
                ch.setdefault("dp", 0.0)
                ch.setdefault("dq", 0.0)
            system.apply_change({k: v for k, v in ch.items() if k != "time"})
            contingency.append(ch)
    normalized = {"name": name}
    if system is not None:
        normalized["system"] = _normalized_system(system)
        normalized["contingency"] = contingency
    else:
        normalized["fixture"] = fixture
    normalized.update({
        "sim": {n: getattr(sim, n) for n in SimConfig.field_names()},
        "checks": list(checks), "delta": delta, "outputs": outputs,
    })
    if backend is not None:
        normalized["backend"] = backend
    return ScenarioConfig(name, system, fixture, tuple(contingency), sim, checks, outputs, float(delta),
                          normalized)


def load_scenario(document, backend=None) -> ScenarioConfig:
    """Load a scenario from a path, a JSON string or a mapping."""
    path = None
    if isinstance(document, dict):
        return parse_scenario(document, backend)
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        path = Path(document)
        text = path.read_text()
    else:
        text = document
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=path) from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be a JSON object", line=1, path=path)
    return parse_scenario(doc, backend)


# ----------------------------------------------------------------- writers
def _fmt(v) -> str:
    return repr(float(v))


def trajectory_header(traj):
    cols = ["t_s"]
    if traj.epsilon_scale != 1.0:
        cols.append("tau")
    return cols + list(traj.layout.names)


def write_trajectory(traj, path):
    """Samples as CSV, one row per sample."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(traj))
        eps = traj.epsilon_scale
        for t, s in zip(traj.times, traj.states):
            row = [_fmt(t)]
            if eps != 1.0:
                row.append(_fmt(t * eps))
            row.extend(_fmt(v) for v in s.as_vector())
            w.writerow(row)


def write_events(traj, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "device", "old", "new"])
        for e in traj.events:
            w.writerow([_fmt(e.time), e.device, _fmt(e.old), _fmt(e.new)])


def write_grid(grid, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis1", "axis2", "class"][:len(grid.axes)] + (["class"] if len(grid.axes) == 1 else []))
        for row in grid.rows():
            w.writerow([_fmt(v) for v in row[:-1]] + [row[-1]])


def write_gaps(metrics, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "gap_slow", "gap_fast"])
        for t, a, b in zip(metrics.times, metrics.slow_gap, metrics.fast_gap):
            w.writerow([_fmt(t), _fmt(a), _fmt(b)])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_report(report, path):
    data = report.to_dict() if hasattr(report, "to_dict") else report
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, allow_nan=False)
        fh.write("\n")


# ----------------------------------------------------------------- parsers
def read_trajectory(path):
    """Returns ``(times, names, values)`` with values of shape (samples, variables)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    skip = 2 if len(header) > 1 and header[1] == "tau" else 1
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(len(rows) - 1, len(header))
    return data[:, 0], tuple(header[skip:]), data[:, skip:]


def read_trajectory_states(path, layout):
    """Parse a trajectory CSV back into times and :class:`PartitionedState` samples."""
    times, names, values = read_trajectory(path)
    if names != layout.names:
        raise ValidationError("column names do not match the layout", key=str(path))
    sizes = [len(layout.zc), len(layout.zd), len(layout.x), len(layout.y)]
    cuts = np.cumsum([0] + sizes)
    states = [PartitionedState(layout, *(row[cuts[i]:cuts[i + 1]] for i in range(4))) for row in values]
    return times, states


def read_events(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [(float(t), d, float(o), float(n)) for t, d, o, n in rows[1:]]


def read_grid(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [tuple(float(v) for v in r[:-1]) + (r[-1],) for r in rows[1:]]


def read_gaps(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, 3)


def read_report(path):
    with open(path) as fh:
        return json.load(fh)
