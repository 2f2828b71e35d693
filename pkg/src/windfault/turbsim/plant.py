"""Plant and baseline-controller building blocks.

Each function advances or evaluates one piece of the closed loop. The linear
actuators (converter, hydraulic pitch) are discretized exactly under a
zero-order-hold input, so they are unconditionally stable and match their
analytic responses to rounding error; the nonlinear rotor uses classical RK4.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from windfault.errors import InvalidArgument, SimulationDiverged
from windfault.turbsim.params import TurbineParams

DEFAULT_PARAMS = TurbineParams()
MAX_DT = 0.05


def _check_dt(dt):
    if not 0 < dt <= MAX_DT:
        raise InvalidArgument(f"dt must lie in (0, {MAX_DT}], got {dt}")


def step_generator(torque, torque_ref, dt, alpha=DEFAULT_PARAMS.converter_alpha):
    """Advance tau_g' + alpha tau_g = alpha tau_ref by ``dt`` with tau_ref held."""
    _check_dt(dt)
    decay = math.exp(-alpha * dt)
    return torque_ref + decay * (torque - torque_ref)


def generator_power(gen_speed, torque, efficiency=DEFAULT_PARAMS.generator_efficiency):
    return efficiency * gen_speed * torque


@lru_cache(maxsize=256)
def pitch_transition(zeta, wn, dt):
    """State-transition matrix of the second-order pitch actuator over ``dt``."""
    a = np.array([[0.0, 1.0], [-wn * wn, -2.0 * zeta * wn]])
    phi = expm(a * dt)
    return tuple(float(x) for x in phi.ravel())


def step_pitch_actuator(pitch, rate, command, zeta, wn, dt):
    """One step of beta'' + 2 zeta wn beta' + wn^2 beta = wn^2 command.

    Angles in degrees. The unit DC gain lets the step be written as a decay of
    the offset from the held command.
    """
    if not zeta > 0 or not wn > 0:
        raise InvalidArgument(f"pitch actuator needs zeta > 0 and wn > 0, got {zeta}, {wn}")
    _check_dt(dt)
    p11, p12, p21, p22 = pitch_transition(float(zeta), float(wn), float(dt))
    off = pitch - command
    return command + p11 * off + p12 * rate, p21 * off + p22 * rate


def reference_power(filtered_speed, pitch_command, params=DEFAULT_PARAMS):
    """Power set point fed to the torque law.

    Region 3 (pitch active or at rated speed) holds rated power. Below that the
    set point follows the optimal-tip-speed torque curve, blended linearly into
    rated torque between 90% and 99% of rated speed.
    """
    w_rated = params.rated_generator_speed
    w = max(filtered_speed, params.omega_floor)
    if pitch_command >= params.region3_pitch or w >= w_rated:
        return params.rated_power
    rated_torque = params.rated_power / w_rated
    w_lo, w_hi = 0.9 * w_rated, 0.99 * w_rated
    torque = params.optimal_torque_gain * w * w
    if w > w_lo:
        t_lo = params.optimal_torque_gain * w_lo * w_lo
        ramp = t_lo + (rated_torque - t_lo) * (w - w_lo) / (w_hi - w_lo)
        torque = min(max(torque, ramp), rated_torque)
    return min(torque * w, params.rated_power)


def torque_controller(power_ref, filtered_speed, params=DEFAULT_PARAMS):
    """tau_ref = P_ref / max(w_hat, floor), clamped to [0, torque_max]."""
    torque = power_ref / max(filtered_speed, params.omega_floor)
    return min(max(torque, 0.0), params.torque_max)


def gain_factor(pitch, params=DEFAULT_PARAMS):
    return 1.0 / (1.0 + max(pitch, 0.0) / params.gain_schedule_pitch)


def pitch_controller(filtered_speed, speed_ref, integrator, dt,
                     params=DEFAULT_PARAMS, schedule_pitch=None):
    """Gain-scheduled PI on generator speed error; returns (command, integrator').

    ``integrator`` holds the integral contribution in degrees. Gains are
    scheduled on ``schedule_pitch`` (defaults to the integrator, which tracks
    the mean blade pitch). Both the integrator and the command are clamped to
    the pitch range, which doubles as anti-windup.
    """
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    sched = integrator if schedule_pitch is None else schedule_pitch
    k = gain_factor(sched, params)
    err = filtered_speed - speed_ref
    integ = integrator + k * params.pitch_ki * err * dt
    integ = min(max(integ, params.pitch_min), params.pitch_max)
    cmd = k * params.pitch_kp * err + integ
    return min(max(cmd, params.pitch_min), params.pitch_max), integ


def filter_speed(filtered, measured, dt, corner_hz=DEFAULT_PARAMS.speed_filter_hz):
    """Exact discretization of a first-order low-pass filter."""
    a = math.exp(-2.0 * math.pi * corner_hz * dt)
    return measured + a * (filtered - measured)


def power_coefficient(tsr, pitch, coeffs=DEFAULT_PARAMS.cp_coeffs):
    """Exponential-family C_p(lambda, beta), floored at zero."""
    c1, c2, c3, c4, c5, c6 = coeffs
    inv_li = 1.0 / (tsr + 0.08 * pitch) - 0.035 / (pitch**3 + 1.0)
    cp = c1 * (c2 * inv_li - c3 * pitch - c4) * math.exp(-c5 * inv_li) + c6 * tsr
    return max(cp, 0.0)


def aero_torque(rotor_speed, wind, pitch, params=DEFAULT_PARAMS):
    r = params.rotor_radius
    tsr = rotor_speed * r / wind
    cp = power_coefficient(tsr, pitch, params.cp_coeffs)
    power = 0.5 * params.air_density * math.pi * r * r * wind**3 * cp
    return power / rotor_speed


def rotor_rk4(rotor_speed, wind, pitch_stages, torque_stages, dt, params=DEFAULT_PARAMS):
    """RK4 step of J w' = tau_aero(v, w, beta) - N tau_g.

    ``pitch_stages`` / ``torque_stages`` give (beta, tau_g) at t, t+dt/2, t+dt,
    so actuator motion inside the step enters the rotor at the right times.
    """
    j, n = params.rotor_inertia, params.gearbox_ratio

    def accel(w, beta, tg):
        if not w > 0:
            return math.nan
        return (aero_torque(w, wind, beta, params) - n * tg) / j

    b0, bh, b1 = pitch_stages
    t0, th, t1 = torque_stages
    k1 = accel(rotor_speed, b0, t0)
    k2 = accel(rotor_speed + 0.5 * dt * k1, bh, th)
    k3 = accel(rotor_speed + 0.5 * dt * k2, bh, th)
    k4 = accel(rotor_speed + dt * k3, b1, t1)
    return rotor_speed + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_rotor(rotor_speed, wind, pitch, gen_torque, dt, params=DEFAULT_PARAMS):
    """Rotor speed after ``dt`` with wind, collective pitch and torque held."""
    if not rotor_speed > 0:
        raise SimulationDiverged("step_rotor", 0.0, f"rotor speed {rotor_speed}")
    if not 0.5 <= wind <= 40.0:
        raise InvalidArgument(f"wind speed {wind} outside [0.5, 40] m/s")
    out = rotor_rk4(rotor_speed, wind, (pitch,) * 3, (gen_torque,) * 3, dt, params)
    if not (math.isfinite(out) and out > 0):
        raise SimulationDiverged("step_rotor", dt, f"rotor speed {out}")
    return out
