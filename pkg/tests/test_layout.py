import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import load_bus_case
from qsslab.errors import LayoutError
from qsslab.layout import PARTS, Layout, PartitionedState

names = st.lists(st.from_regex(r"[a-z]{1,3}\.[a-z_]{1,4}", fullmatch=True), unique=True, max_size=12)


@given(names=names, cuts=st.lists(st.integers(0, 12), min_size=3, max_size=3))
def test_layout_is_a_bijection(names, cuts):
    c = sorted(min(k, len(names)) for k in cuts)
    L = Layout(zc=names[:c[0]], zd=names[c[0]:c[1]], x=names[c[1]:c[2]], y=names[c[2]:])
    assert L.names == tuple(names) and len(L) == len(names)
    for part in PARTS:
        for i, n in enumerate(getattr(L, part)):
            assert L.locate(n) == (part, i)


def test_duplicate_names_are_rejected():
    with pytest.raises(LayoutError, match="twice"):
        Layout(x=["g.delta"], y=["g.delta"])


def test_unknown_name():
    L = Layout(x=["g.delta"])
    assert "g.delta" in L and "g.omega" not in L
    with pytest.raises(LayoutError):
        L.locate("g.omega")


def test_state_access_and_replace():
    L = Layout(zc=["a.z"], zd=["c.m"], x=["g.d", "g.w"], y=["b.v"])
    s = PartitionedState(L, zc=[1.0], zd=[0.9], x=[0.1, 1.0], y=[1.02])
    assert s["g.w"] == 1.0 and s["c.m"] == 0.9
    t = s.replace(**{"g.w": 1.01}, y=[0.5])
    assert t["g.w"] == 1.01 and t["b.v"] == 0.5 and s["g.w"] == 1.0
    assert np.array_equal(t.as_vector(), [1.0, 0.9, 0.1, 1.01, 0.5])
    assert list(t.to_dict()) == list(L.names)
    with pytest.raises(ValueError):
        s.x[0] = 3.0


def test_state_copies_its_input():
    L = Layout(x=["a", "b"])
    arr = np.array([1.0, 2.0])
    s = PartitionedState(L, [], [], arr, [])
    arr[0] = 9.0
    assert s["a"] == 1.0


def test_dimension_mismatch():
    L = Layout(x=["a", "b"])
    with pytest.raises(LayoutError, match="partition x"):
        PartitionedState(L, [], [], [1.0], [])


def test_model_rejects_a_foreign_state():
    model, s = load_bus_case()
    other = PartitionedState(Layout(x=["a"]), [], [], [0.0], [])
    with pytest.raises(LayoutError):
        other.check(model.layout)
    s.check(model.layout)


def test_system_names_follow_device_variable():
    model, _ = load_bus_case()
    L = model.layout
    assert all(n.count(".") == 1 for n in L.names)
    assert L.zd == ("ltc1.m",)
    assert {"g1.delta", "g1.omega"} <= set(L.x)
    assert "o1.v_oxl" in L.zc and "e1.x_p" in L.zc
