"""Time-domain simulation of the transient, long-term and QSS models."""
from .engine import (SimConfig, Trajectory, LimitCycleDetector, TERMINATIONS, qss_project,
                     simulate_longterm, simulate_qss, simulate_transient)
from .stepper import PyStepper

__all__ = ["SimConfig", "Trajectory", "LimitCycleDetector", "TERMINATIONS", "PyStepper",
           "qss_project", "simulate_transient", "simulate_longterm", "simulate_qss"]
