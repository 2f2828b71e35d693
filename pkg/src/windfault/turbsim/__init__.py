"""Synthetic wind, closed-loop turbine model and fault injection."""

from windfault.turbsim.faults import ActuatorParams, Readings, apply_fault
from windfault.turbsim.params import (
    CHANNELS,
    FaultKind,
    FaultScenario,
    SensorTrace,
    TurbineParams,
    TurbineState,
)
from windfault.turbsim.plant import (
    generator_power,
    pitch_controller,
    step_generator,
    step_pitch_actuator,
    step_rotor,
    torque_controller,
)
from windfault.turbsim.simulate import run_simulation, simulate_run
from windfault.turbsim.wind import WindProfile, generate_wind

__all__ = [
    "CHANNELS", "ActuatorParams", "FaultKind", "FaultScenario", "Readings", "SensorTrace",
    "TurbineParams", "TurbineState", "WindProfile", "apply_fault", "generate_wind",
    "generator_power", "pitch_controller", "run_simulation", "simulate_run",
    "step_generator", "step_pitch_actuator", "step_rotor", "torque_controller",
]
