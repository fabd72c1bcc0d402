"""qsslab: long-term power-system dynamics and QSS-model validity checks.

The toolkit simulates a hybrid differential-algebraic power-system model in
three forms (transient, long-term, quasi steady-state), classifies points of
the constraint manifold, samples stability regions of the transient model,
and reports whether a QSS run can be trusted for a given scenario.
"""
from .errors import *  # noqa: F401,F403
from .layout import Layout, PartitionedState
from .model import DynamicModel, FunctionModel

__version__ = "0.1.0"

__all__ = ["Layout", "PartitionedState", "DynamicModel", "FunctionModel", "__version__"]
