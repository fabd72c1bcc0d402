"""Residual and integration-step kernels for the power-system model.

Two interchangeable backends exist:

``compiled``
    The Cython extension ``qsslab.kernels._core`` (device residuals, the
    finite-difference Jacobian and the implicit-trapezoid Newton step in C).
``python``
    :mod:`qsslab.kernels._core_py`, built on the reference device equations.

The compiled backend is used when the extension imports; setting the
environment variable ``QSSLAB_BACKEND=python`` forces the fallback.
"""
import os

from ._core_py import PyKernel

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None


def available_backends():
    return ("compiled", "python") if _compiled is not None else ("python",)


def default_backend():
    requested = os.environ.get("QSSLAB_BACKEND", "").strip().lower()
    if requested == "python" or _compiled is None:
        return "python"
    return "compiled"


BACKEND = default_backend()


def make_kernel(model, backend=None):
    backend = backend or default_backend()
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel requested but qsslab.kernels._core is not built")
        return _compiled.CKernel(model)
    if backend == "python":
        return PyKernel(model)
    raise ValueError(f"unknown backend {backend!r}")
