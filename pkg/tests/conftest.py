import copy
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import qsslab
from qsslab.checker import assess, run_pair
from qsslab.io import load_scenario

DATA = Path(qsslab.__file__).parent / "data"

settings.register_profile("default", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# a two-bus generator/infinite-bus system; small enough for per-test setup
SMIB = {
    "name": "smib",
    "system": {
        "buses": [{"id": 1, "type": "slack", "v": 1.0}, {"id": 2, "type": "pv", "v": 1.0}],
        "branches": [{"id": "l12", "from_bus": 1, "to_bus": 2, "x": 0.2}],
        "gen": [{"id": "g1", "bus": 2, "p0": 0.5}],
        "avr": [{"id": "a1", "gen": "g1"}],
        "tg": [{"id": "tg1", "gen": "g1"}],
    },
}


def smib_doc(**system_extra):
    doc = copy.deepcopy(SMIB)
    doc["system"].update(copy.deepcopy(system_extra))
    return doc


def smib(backend=None, **system_extra):
    """Initialized (model, state) of the SMIB case plus optional device blocks."""
    sc = load_scenario(smib_doc(**system_extra), backend=backend)
    return sc.system.initialize()


def load_bus_case(backend=None):
    """SMIB feeding a load bus through an LTC transformer, with OXL and ERL."""
    doc = smib_doc()
    s = doc["system"]
    s["buses"].append({"id": 3})
    s["branches"].append({"id": "t23", "from_bus": 2, "to_bus": 3, "x": 0.1})
    s["oxl"] = [{"id": "o1", "gen": "g1", "i_f_lim": 2.0, "t_0": 10.0}]
    s["erl"] = [{"id": "e1", "bus": 3, "p_l0": 0.4, "q_l0": 0.1, "t_p": 30.0, "t_q": 30.0}]
    s["ltc"] = [{"id": "ltc1", "branch": "t23", "bus": 3}]
    s["load"] = [{"id": "ld", "bus": 3, "p": 0.05, "q": 0.02}]
    sc = load_scenario(doc, backend=backend)
    return sc.system.initialize()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def success_path():
    return DATA / "success.json"


@pytest.fixture(scope="session")
def failure_path():
    return DATA / "failure.json"


def _run(path):
    sc = load_scenario(path)
    model, init = sc.build()
    pair = run_pair(model, init, sc.sim)
    report = assess(pair, sc.sim, delta=sc.delta, checks=sc.checks)
    return sc, pair, report


@pytest.fixture(scope="session")
def success_case(success_path):
    return _run(success_path)


@pytest.fixture(scope="session")
def failure_case(failure_path):
    return _run(failure_path)


def read_json(path):
    return json.loads(Path(path).read_text())
