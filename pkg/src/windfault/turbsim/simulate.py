"""Closed-loop simulation producing one labelled 80 Hz sensor trace."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq

from windfault.errors import InvalidArgument, SimulationDiverged
from windfault.turbsim import plant
from windfault.turbsim.faults import ActuatorParams, Readings, apply_fault
from windfault.turbsim.params import FaultScenario, SensorTrace, TurbineParams, TurbineState
from windfault.turbsim.wind import WindProfile, generate_wind

INTERNAL_CHANNELS = ("rotor_speed", "generator_torque", "pitch1", "pitch2", "pitch3",
                     "pitch_command", "filtered_generator_speed", "generator_power",
                     "generator_speed", "measured_generator_speed", "controller_torque",
                     "converter_input")


def initial_state(params: TurbineParams, wind_speed: float) -> TurbineState:
    """Trimmed operating point at rated speed for the given wind speed.

    Above rated the pitch is solved so aerodynamic and generator torque
    balance; below rated the rotor starts at rated speed with zero pitch and
    the controller settles it.
    """
    w_r = params.rated_generator_speed / params.gearbox_ratio
    torque = params.rated_power / params.rated_generator_speed
    load = params.gearbox_ratio * torque

    def imbalance(beta):
        return plant.aero_torque(w_r, wind_speed, beta, params) - load

    pitch = 0.0
    if imbalance(0.0) > 0 and imbalance(params.pitch_max - 1.0) < 0:
        pitch = brentq(imbalance, 0.0, params.pitch_max - 1.0, xtol=1e-10)
    return TurbineState(
        rotor_speed=w_r,
        generator_torque=torque,
        torque_reference=torque,
        filtered_generator_speed=params.rated_generator_speed,
        pitch=[pitch] * 3,
        pitch_rate=[0.0] * 3,
        pitch_command=pitch,
        integrator=pitch,
        generator_power=plant.generator_power(params.rated_generator_speed, torque,
                                              params.generator_efficiency),
        gearbox_ratio=params.gearbox_ratio,
    )


def _clamp(x, lo, hi):
    return lo if x < lo else hi if x > hi else x


def run_simulation(params: TurbineParams, scenario: FaultScenario, wind: WindProfile,
                   duration_s: float = 600.0, run_id: str = "run",
                   return_internal: bool = False):
    """Integrate the closed loop and sample the five sensor channels at 80 Hz.

    The controller acts on *measured* generator speed, so a speed-sensor gain
    fault changes the true trajectory while pitch-sensor faults do not. With
    ``return_internal`` the true (fault-free) signals are returned as well.
    """
    n_samples = duration_s * params.sample_rate
    if abs(n_samples - round(n_samples)) > 1e-9 or round(n_samples) < 1:
        raise InvalidArgument(f"duration {duration_s}s is not a whole number of samples")
    n_samples = int(round(n_samples))
    if wind.duration + 1e-9 < duration_s:
        raise InvalidArgument(f"wind covers {wind.duration}s, need {duration_s}s")
    scenario.check_duration(duration_s)

    dt = params.internal_dt
    half = 0.5 * dt
    sps = params.steps_per_sample
    n_steps = n_samples * sps
    gear = params.gearbox_ratio
    speed_ref = params.rated_generator_speed
    lo, hi = params.pitch_min, params.pitch_max
    gen_decay_h = math.exp(-params.converter_alpha * half)
    gen_decay = math.exp(-params.converter_alpha * dt)

    st = initial_state(params, float(np.mean(wind.samples)))
    nominal = ActuatorParams.nominal(params)
    out = np.empty((n_samples, 5))
    internal = np.empty((n_samples, len(INTERNAL_CHANNELS))) if return_internal else None

    for k in range(n_steps):
        t = k * dt
        true = Readings(st.rotor_speed, gear * st.rotor_speed, st.generator_torque,
                        tuple(st.pitch))
        seen, eff = apply_fault(true, nominal, scenario, t)
        if k % sps == 0:
            i = k // sps
            out[i] = (seen.rotor_speed, seen.generator_torque, *seen.pitch)
            if internal is not None:
                internal[i, :8] = (st.rotor_speed, st.generator_torque, *st.pitch,
                                   st.pitch_command, st.filtered_generator_speed,
                                   st.generator_power)
                internal[i, 8:10] = (true.generator_speed, seen.generator_speed)

        st.filtered_generator_speed = plant.filter_speed(
            st.filtered_generator_speed, seen.generator_speed, dt, params.speed_filter_hz)
        p_ref = plant.reference_power(st.filtered_generator_speed, st.pitch_command, params)
        tau_ctrl = plant.torque_controller(p_ref, st.filtered_generator_speed, params)
        st.torque_reference = tau_ctrl + eff.torque_offset
        if internal is not None and k % sps == 0:
            internal[k // sps, 10:12] = (tau_ctrl, st.torque_reference)
        st.pitch_command, st.integrator = plant.pitch_controller(
            st.filtered_generator_speed, speed_ref, st.integrator, dt, params)

        tg0, ref = st.generator_torque, st.torque_reference
        tg_h = ref + gen_decay_h * (tg0 - ref)
        tg_1 = ref + gen_decay * (tg0 - ref)

        beta_h = [0.0] * 3
        beta_1 = [0.0] * 3
        rate_1 = [0.0] * 3
        for b in range(3):
            zeta, wn = eff.pitch[b]
            beta_h[b], _ = plant.step_pitch_actuator(st.pitch[b], st.pitch_rate[b],
                                                     st.pitch_command, zeta, wn, half)
            beta_1[b], rate_1[b] = plant.step_pitch_actuator(st.pitch[b], st.pitch_rate[b],
                                                             st.pitch_command, zeta, wn, dt)
        stages = (sum(st.pitch) / 3.0,
                  _clamp(sum(beta_h) / 3.0, lo, hi),
                  _clamp(sum(beta_1) / 3.0, lo, hi))
        v = _clamp(wind.at(t), 0.5, 40.0)
        w_next = plant.rotor_rk4(st.rotor_speed, v, stages, (tg0, tg_h, tg_1), dt, params)

        for b in range(3):
            if beta_1[b] <= lo or beta_1[b] >= hi:
                beta_1[b] = _clamp(beta_1[b], lo, hi)
                rate_1[b] = 0.0
        st.rotor_speed = w_next
        st.generator_torque = tg_1
        st.pitch = beta_1
        st.pitch_rate = rate_1
        st.generator_power = plant.generator_power(gear * w_next, tg_1,
                                                   params.generator_efficiency)
        if not (w_next > 0 and st.is_finite()):
            raise SimulationDiverged(run_id, t + dt, f"rotor speed {w_next}")

    trace = SensorTrace(run_id=run_id, label=int(scenario.kind), values=out,
                        wind_seed=int(wind.seed), sample_rate=params.sample_rate,
                        scenario=scenario.to_dict(),
                        wind={"mean_speed": float(wind.target_mean),
                              "turbulence_intensity": float(wind.turbulence_intensity)})
    if return_internal:
        return trace, internal
    return trace


def simulate_run(scenario: FaultScenario, seed: int, duration_s: float = 600.0,
                 mean_speed: float = 18.2, turbulence_intensity: float = 0.10,
                 params: TurbineParams | None = None, run_id: str | None = None):
    """Convenience wrapper: generate wind for ``seed`` and simulate one run."""
    params = params or TurbineParams()
    wind = generate_wind(seed, duration_s, params.internal_dt, mean_speed, turbulence_intensity)
    run_id = run_id or f"{scenario.kind.name}-s{seed}"
    return run_simulation(params, scenario, wind, duration_s, run_id=run_id)
