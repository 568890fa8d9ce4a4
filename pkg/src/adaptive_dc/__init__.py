"""Distributed adaptive control of a single-bus DC distribution network.

Simulation (compiled fixed-step kernel with a pure-Python fallback) and
analytic verification of voltage regulation, weighted current sharing and
online line-resistance estimation.
"""
from .controllers import (
    AdaptiveCtrlState,
    ControllerGains,
    DroopGains,
    KnownRGains,
    reference_c1_gains,
    verify_gains,
)
from .graph import CommGraph
from .plant import PlantParams, PlantState, plant_derivative, reference_plant_params
from .scenario import Scenario, Trajectory, builtin_regional_profile, short_regional_profile

__version__ = "0.1.0"

__all__ = [
    "AdaptiveCtrlState",
    "CommGraph",
    "ControllerGains",
    "DroopGains",
    "KnownRGains",
    "PlantParams",
    "PlantState",
    "Scenario",
    "Trajectory",
    "builtin_regional_profile",
    "reference_c1_gains",
    "plant_derivative",
    "short_regional_profile",
    "reference_plant_params",
    "verify_gains",
]
