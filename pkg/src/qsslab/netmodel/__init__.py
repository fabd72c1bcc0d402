"""Network and device models of the long-term power-system model."""
from .devices import (AvrModel, ErlModel, GeneratorModel, LtcModel, OxlModel, StaticLoad,
                      TurbineGovernorModel)
from .network import Branch, Bus, Network
from .system import (Event, LtcTimer, SystemModel, eval_algebraic, eval_discrete_update,
                     eval_fast, eval_slow_continuous)

__all__ = [
    "AvrModel", "Branch", "Bus", "ErlModel", "Event", "GeneratorModel", "LtcModel", "LtcTimer",
    "Network", "OxlModel", "StaticLoad", "SystemModel", "TurbineGovernorModel",
    "eval_algebraic", "eval_discrete_update", "eval_fast", "eval_slow_continuous",
]
