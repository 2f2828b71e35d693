"""Turbine constants, fault scenarios and the trace container."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from windfault.errors import InvalidArgument

RPM_TO_RAD_S = 2.0 * math.pi / 60.0

CHANNELS = ("rotor_speed", "generator_torque", "pitch1", "pitch2", "pitch3")
CHANNEL_UNITS = ("rad/s", "Nm", "deg", "deg", "deg")


@dataclass(frozen=True)
class TurbineParams:
    """NREL 5-MW reference turbine plus the surrogate rotor/controller tuning.

    The first block are the published turbine and actuator constants. Everything
    below ``rotor_inertia`` belongs to the 1-DOF surrogate and the baseline
    controller; those values are ours, chosen so that rated power is reached
    near 11.4 m/s and generator speed is regulated above rated.
    """

    rated_power: float = 5.0e6  # W
    gearbox_ratio: float = 98.0
    rotor_diameter: float = 126.0  # m
    cut_in: float = 3.0  # m/s
    rated_wind: float = 11.4  # m/s
    cut_out: float = 25.0  # m/s
    nominal_generator_speed_rpm: float = 1173.7
    generator_efficiency: float = 0.98
    converter_alpha: float = 50.0  # 1/s, used for both alpha_g and alpha_gc
    pitch_zeta: float = 0.7
    pitch_wn: float = 11.11  # rad/s

    # rotor 38,759,228 kg m^2 + 98^2 * 534.116 kg m^2 generator, low-speed side
    rotor_inertia: float = 4.3888878e7
    air_density: float = 1.225
    # C_p(lam, beta) = c1 (c2/lam_i - c3 beta - c4) exp(-c5/lam_i) + c6 lam
    cp_coeffs: tuple = (0.5176, 116.0, 0.4, 5.0, 21.0, 0.0068)

    speed_filter_hz: float = 0.25
    pitch_kp: float = 2.42  # deg per rad/s of generator speed error, at beta=0
    pitch_ki: float = 1.04  # deg per rad of integrated error, at beta=0
    gain_schedule_pitch: float = 30.0  # deg, K(beta) = K0 / (1 + beta/beta_k)
    pitch_min: float = 0.0
    pitch_max: float = 90.0
    region3_pitch: float = 1.0  # deg; above this the torque loop holds rated power
    optimal_torque_gain: float = 2.3323  # Nm/(rad/s)^2 on the generator side
    omega_floor: float = 1.0  # rad/s
    torque_max: float = 47402.91  # Nm

    internal_dt: float = 1.0 / 160.0
    sample_rate: float = 80.0

    def __post_init__(self):
        positive = {k: v for k, v in asdict(self).items()
                    if isinstance(v, (int, float)) and k not in ("pitch_min",)}
        bad = [k for k, v in positive.items() if not v > 0]
        if bad:
            raise InvalidArgument(f"turbine constants must be positive: {bad}")
        if not self.cut_in < self.rated_wind < self.cut_out:
            raise InvalidArgument("need cut_in < rated_wind < cut_out")
        if not 0 < self.generator_efficiency <= 1:
            raise InvalidArgument("generator_efficiency must lie in (0, 1]")
        steps = 1.0 / (self.internal_dt * self.sample_rate)
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise InvalidArgument("internal_dt must divide the sample period")

    @property
    def rotor_radius(self) -> float:
        return self.rotor_diameter / 2.0

    @property
    def rated_generator_speed(self) -> float:
        """Nominal generator speed in rad/s (1173.7 rpm = 122.91 rad/s)."""
        return self.nominal_generator_speed_rpm * RPM_TO_RAD_S

    @property
    def steps_per_sample(self) -> int:
        return int(round(1.0 / (self.internal_dt * self.sample_rate)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cp_coeffs"] = list(self.cp_coeffs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TurbineParams":
        d = dict(d)
        if "cp_coeffs" in d:
            d["cp_coeffs"] = tuple(d["cp_coeffs"])
        return cls(**d)


class FaultKind(enum.IntEnum):
    Healthy = 0
    F1_HighAir = 1
    F2_PumpWear = 2
    F3_HydraulicLeak = 3
    F4_GenSpeedGain = 4
    F5_PitchFixed10 = 5
    F6_PitchFixed5 = 6
    F7_TorqueOffset = 7

    @classmethod
    def parse(cls, value) -> "FaultKind":
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            try:
                return cls(int(value))
            except ValueError:
                raise InvalidArgument(f"unknown fault kind {value!r}") from None
        key = str(value).strip().lower().replace("-", "_")
        for kind in cls:
            name = kind.name.lower()
            if key in (name, name.split("_")[0], str(kind.value)):
                return kind
        raise InvalidArgument(f"unknown fault kind {value!r}")


ACTUATOR_FAULTS = {
    FaultKind.F1_HighAir: (0.45, 5.73),
    FaultKind.F2_PumpWear: (0.75, 7.27),
    FaultKind.F3_HydraulicLeak: (0.9, 3.42),
}
FIXED_PITCH = {FaultKind.F5_PitchFixed10: 10.0, FaultKind.F6_PitchFixed5: 5.0}
SPEED_SENSOR_GAIN = 1.2
TORQUE_OFFSET = 2000.0


@dataclass(frozen=True)
class FaultScenario:
    """One row of the fault table, with only the fields its kind uses.

    ``active_interval`` of ``None`` means the fault is present for the whole
    run. ``blade`` selects which pitch actuator (F1-F3) or which pitch sensor
    (F5/F6) is faulty.
    """

    kind: FaultKind = FaultKind.Healthy
    pitch_zeta: float | None = None
    pitch_wn: float | None = None
    sensor_gain: float | None = None
    fixed_pitch_value: float | None = None
    torque_offset: float | None = None
    active_interval: tuple | None = None
    blade: int | None = None

    def __post_init__(self):
        kind = FaultKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        present = {k for k in ("pitch_zeta", "pitch_wn", "sensor_gain",
                               "fixed_pitch_value", "torque_offset", "blade")
                   if getattr(self, k) is not None}
        if kind in ACTUATOR_FAULTS:
            expected = {"pitch_zeta", "pitch_wn", "blade"}
        elif kind == FaultKind.F4_GenSpeedGain:
            expected = {"sensor_gain"}
        elif kind in FIXED_PITCH:
            expected = {"fixed_pitch_value", "blade"}
        elif kind == FaultKind.F7_TorqueOffset:
            expected = {"torque_offset"}
        else:
            expected = set()
        if present != expected:
            raise InvalidArgument(
                f"{kind.name} takes fields {sorted(expected)}, got {sorted(present)}")
        if kind == FaultKind.Healthy and self.active_interval is not None:
            raise InvalidArgument("Healthy scenario carries no active interval")
        if self.blade is not None and self.blade not in (0, 1, 2):
            raise InvalidArgument(f"blade index must be 0, 1 or 2, got {self.blade}")
        if kind in ACTUATOR_FAULTS and not (self.pitch_zeta > 0 and self.pitch_wn > 0):
            raise InvalidArgument("pitch actuator overrides must be positive")
        if self.active_interval is not None:
            start, end = self.active_interval
            if not 0 <= start <= end:
                raise InvalidArgument(f"bad active interval {self.active_interval}")
            object.__setattr__(self, "active_interval", (float(start), float(end)))

    @classmethod
    def nominal(cls, kind, active_interval=None, blade=None) -> "FaultScenario":
        """Scenario with the fault-table values for ``kind``.

        Actuator faults default to the second blade's actuator and fixed-value
        sensor faults to the first blade's sensor.
        """
        kind = FaultKind.parse(kind)
        if kind == FaultKind.Healthy:
            return cls()
        if kind in ACTUATOR_FAULTS:
            zeta, wn = ACTUATOR_FAULTS[kind]
            return cls(kind, pitch_zeta=zeta, pitch_wn=wn,
                       blade=1 if blade is None else blade,
                       active_interval=active_interval)
        if kind == FaultKind.F4_GenSpeedGain:
            return cls(kind, sensor_gain=SPEED_SENSOR_GAIN, active_interval=active_interval)
        if kind in FIXED_PITCH:
            return cls(kind, fixed_pitch_value=FIXED_PITCH[kind],
                       blade=0 if blade is None else blade,
                       active_interval=active_interval)
        return cls(kind, torque_offset=TORQUE_OFFSET, active_interval=active_interval)

    def is_active(self, t: float) -> bool:
        if self.kind == FaultKind.Healthy:
            return False
        if self.active_interval is None:
            return True
        start, end = self.active_interval
        return start <= t <= end

    def check_duration(self, duration: float) -> None:
        if self.active_interval is not None and self.active_interval[1] > duration:
            raise InvalidArgument(
                f"active interval {self.active_interval} exceeds run duration {duration}")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        d["kind"] = self.kind.name
        if "active_interval" in d:
            d["active_interval"] = list(d["active_interval"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FaultScenario":
        d = dict(d)
        d["kind"] = FaultKind.parse(d["kind"])
        if d.get("active_interval") is not None:
            d["active_interval"] = tuple(d["active_interval"])
        return cls(**d)


@dataclass
class TurbineState:
    """Mutable closed-loop state. Angles are in degrees, speeds in rad/s."""

    rotor_speed: float
    generator_torque: float
    torque_reference: float
    filtered_generator_speed: float
    pitch: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    pitch_rate: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    pitch_command: float = 0.0
    integrator: float = 0.0
    generator_power: float = 0.0
    gearbox_ratio: float = 98.0

    @property
    def generator_speed(self) -> float:
        return self.gearbox_ratio * self.rotor_speed

    def is_finite(self) -> bool:
        vals = [self.rotor_speed, self.generator_torque, self.torque_reference,
                self.filtered_generator_speed, self.pitch_command, self.integrator,
                *self.pitch, *self.pitch_rate]
        return all(math.isfinite(v) for v in vals)

    def copy(self) -> "TurbineState":
        return replace(self, pitch=list(self.pitch), pitch_rate=list(self.pitch_rate))


@dataclass
class SensorTrace:
    run_id: str
    label: int
    values: np.ndarray  # T x 5, channel order CHANNELS
    wind_seed: int
    sample_rate: float = 80.0
    scenario: dict = field(default_factory=dict)
    wind: dict = field(default_factory=dict)  # mean_speed, turbulence_intensity

    channels = CHANNELS
    units = CHANNEL_UNITS

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(CHANNELS):
            raise InvalidArgument(f"trace must be T x 5, got {self.values.shape}")

    @property
    def duration(self) -> float:
        return self.values.shape[0] / self.sample_rate

    def header(self) -> dict:
        return {
            "run_id": self.run_id,
            "label": int(self.label),
            "sample_rate": self.sample_rate,
            "channels": list(CHANNELS),
            "units": list(CHANNEL_UNITS),
            "wind_seed": int(self.wind_seed),
            "scenario": self.scenario,
            "wind": self.wind,
            "n_samples": int(self.values.shape[0]),
        }
