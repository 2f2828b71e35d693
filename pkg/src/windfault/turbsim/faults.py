"""Fault injection: actuator faults edit dynamics, sensor faults edit readings."""

from __future__ import annotations

from dataclasses import dataclass

from windfault.errors import InvalidArgument
from windfault.turbsim.params import FIXED_PITCH, FaultKind, FaultScenario, TurbineParams


@dataclass(frozen=True)
class ActuatorParams:
    """Per-blade pitch actuator (zeta, wn) plus the converter input offset."""

    pitch: tuple
    torque_offset: float = 0.0

    @classmethod
    def nominal(cls, params: TurbineParams) -> "ActuatorParams":
        return cls(pitch=((params.pitch_zeta, params.pitch_wn),) * 3)


@dataclass(frozen=True)
class Readings:
    rotor_speed: float
    generator_speed: float
    generator_torque: float
    pitch: tuple


def apply_fault(readings: Readings, actuator: ActuatorParams, scenario: FaultScenario, t):
    """Return the (reported readings, effective actuator params) at time ``t``."""
    if not isinstance(scenario, FaultScenario):
        raise InvalidArgument(f"expected a FaultScenario, got {type(scenario).__name__}")
    kind = scenario.kind
    if kind not in FaultKind.__members__.values():
        raise InvalidArgument(f"unknown fault kind {kind!r}")
    if not scenario.is_active(t):
        return readings, actuator

    if kind in (FaultKind.F1_HighAir, FaultKind.F2_PumpWear, FaultKind.F3_HydraulicLeak):
        pitch = list(actuator.pitch)
        pitch[scenario.blade] = (scenario.pitch_zeta, scenario.pitch_wn)
        return readings, ActuatorParams(tuple(pitch), actuator.torque_offset)
    if kind == FaultKind.F4_GenSpeedGain:
        faulty = Readings(readings.rotor_speed, scenario.sensor_gain * readings.generator_speed,
                          readings.generator_torque, readings.pitch)
        return faulty, actuator
    if kind in FIXED_PITCH:
        pitch = list(readings.pitch)
        pitch[scenario.blade] = scenario.fixed_pitch_value
        return Readings(readings.rotor_speed, readings.generator_speed,
                        readings.generator_torque, tuple(pitch)), actuator
    if kind == FaultKind.F7_TorqueOffset:
        return readings, ActuatorParams(actuator.pitch,
                                        actuator.torque_offset + scenario.torque_offset)
    raise InvalidArgument(f"unhandled fault kind {kind!r}")
