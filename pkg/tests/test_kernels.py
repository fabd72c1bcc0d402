import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import load_bus_case
from qsslab.kernels import available_backends, make_kernel
from qsslab.sim import SimConfig, simulate_longterm

compiled = pytest.mark.skipif("compiled" not in available_backends(), reason="extension not built")


@pytest.fixture(scope="module")
def both():
    return load_bus_case("compiled"), load_bus_case("python")


def _perturbed(s, seed, scale=0.02):
    rng = np.random.default_rng(seed)
    return (s.zc + scale * rng.standard_normal(s.zc.size), s.zd,
            s.x + scale * rng.standard_normal(s.x.size), s.y + scale * rng.standard_normal(s.y.size))


@compiled
@given(seed=st.integers(0, 2**32 - 1))
def test_residual_parity(both, seed):
    (mc, s), (mp, _) = both
    zc, zd, x, y = _perturbed(s, seed)
    for a, b in zip(mc.eval_all(0.0, zc, zd, x, y), mp.eval_all(0.0, zc, zd, x, y)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@compiled
@given(seed=st.integers(0, 2**32 - 1))
def test_jacobian_parity(both, seed):
    (mc, s), (mp, _) = both
    zc, zd, x, y = _perturbed(s, seed)
    # finite-difference columns in both backends; agreement limited by the difference step
    np.testing.assert_allclose(mc.eval_jacobian(0.0, zc, zd, x, y), mp.eval_jacobian(0.0, zc, zd, x, y),
                               rtol=0, atol=1e-7)


@compiled
def test_step_parity(both):
    (mc, s), (mp, _) = both
    s = s.replace(**{"g1.omega": 1.003, "ltc1.m": 0.98})
    cfg = SimConfig(horizon=60.0, qss_start_time=0.0)
    a = simulate_longterm(mc, s, cfg)
    b = simulate_longterm(mp, s, cfg)
    assert a.termination == b.termination and len(a) == len(b)
    assert [(e.time, e.new) for e in a.events] == [(e.time, e.new) for e in b.events]
    assert np.max(np.abs(a.final.as_vector() - b.final.as_vector())) < 1e-8


def test_unknown_backend():
    model, _ = load_bus_case("python")
    with pytest.raises(ValueError):
        make_kernel(model, "fortran")


def test_environment_forces_the_fallback():
    env = dict(os.environ, QSSLAB_BACKEND="python")
    r = subprocess.run([sys.executable, "-c", "import qsslab.kernels as k; print(k.BACKEND)"],
                       capture_output=True, text=True, env=env, check=True)
    assert r.stdout.strip() == "python"
