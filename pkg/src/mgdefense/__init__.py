"""Attack-resilient distributed secondary control of inverter-based microgrids."""

from .attacks import AttackSignal, Polynomial, Power, Ramp, Sinusoid, Sum, certify_assumption2
from .controller import ControllerParams, LeaderSignal
from .engine import Diverged, SimTrace, Simulator, run, step
from .plant import ElectricalNetwork, InverterParams
from .scenario import (ConfigError, ScenarioConfig, ScenarioEvent, UnknownPreset, load_scenario,
                       preset, preset_names)
from .topology import CommGraph, SingularPhiSum, assumption1_holds, build_matrices

__version__ = "0.1.0"

__all__ = [
    "AttackSignal", "CommGraph", "ConfigError", "ControllerParams", "Diverged", "ElectricalNetwork",
    "InverterParams", "LeaderSignal", "Polynomial", "Power", "Ramp", "ScenarioConfig", "ScenarioEvent",
    "SimTrace", "Simulator", "Sinusoid", "SingularPhiSum", "Sum", "UnknownPreset", "assumption1_holds",
    "build_matrices", "certify_assumption2", "load_scenario", "preset", "preset_names", "run", "step",
]
