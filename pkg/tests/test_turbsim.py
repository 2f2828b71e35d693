import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from windfault.errors import InvalidArgument, SimulationDiverged
from windfault.turbsim import (
    ActuatorParams,
    FaultKind,
    FaultScenario,
    Readings,
    TurbineParams,
    apply_fault,
    generate_wind,
    generator_power,
    pitch_controller,
    run_simulation,
    simulate_run,
    step_generator,
    step_pitch_actuator,
    step_rotor,
    torque_controller,
)
from windfault.turbsim.io import load_trace, read_manifest, save_trace, simulate_corpus
from windfault.turbsim.plant import aero_torque, gain_factor
from windfault.turbsim.simulate import INTERNAL_CHANNELS
from windfault.turbsim.wind import kaimal_psd

P = TurbineParams()
DT = 1.0 / 80.0


def underdamped_step(t, zeta, wn, amplitude=1.0):
    wd = wn * math.sqrt(1 - zeta**2)
    phi = math.acos(zeta)
    return amplitude * (1 - np.exp(-zeta * wn * t) * np.sin(wd * t + phi) / math.sqrt(1 - zeta**2))


def pitch_step(zeta, wn, n, dt=DT, command=1.0):
    beta, rate, out = 0.0, 0.0, [0.0]
    for _ in range(n):
        beta, rate = step_pitch_actuator(beta, rate, command, zeta, wn, dt)
        out.append(beta)
    return np.array(out)


def rise_time(y, dt, final=1.0):
    t10 = np.argmax(y >= 0.1 * final)
    t90 = np.argmax(y >= 0.9 * final)
    return (t90 - t10) * dt


# ---------------------------------------------------------------- parameters

def test_params_published_values():
    assert P.rated_generator_speed == pytest.approx(122.91, abs=5e-3)
    assert P.rotor_radius == 63.0
    assert P.gearbox_ratio == 98.0


@pytest.mark.parametrize("field,value", [("rated_power", 0.0), ("gearbox_ratio", -1.0),
                                         ("generator_efficiency", 1.5)])
def test_params_reject_invalid(field, value):
    with pytest.raises(InvalidArgument):
        TurbineParams(**{field: value})


def test_params_wind_order():
    with pytest.raises(InvalidArgument):
        TurbineParams(cut_in=12.0)


def test_params_dict_round_trip():
    assert TurbineParams.from_dict(P.to_dict()) == P


def test_scenario_fields_match_kind():
    assert FaultScenario.nominal(FaultKind.Healthy).to_dict() == {"kind": "Healthy"}
    f1 = FaultScenario.nominal(FaultKind.F1_HighAir)
    assert (f1.pitch_zeta, f1.pitch_wn) == (0.45, 5.73)
    assert FaultScenario.nominal(FaultKind.F2_PumpWear).pitch_wn == 7.27
    assert FaultScenario.nominal(FaultKind.F3_HydraulicLeak).pitch_zeta == 0.9
    assert FaultScenario.nominal(FaultKind.F4_GenSpeedGain).sensor_gain == 1.2
    assert FaultScenario.nominal(FaultKind.F5_PitchFixed10).fixed_pitch_value == 10.0
    assert FaultScenario.nominal(FaultKind.F6_PitchFixed5).fixed_pitch_value == 5.0
    assert FaultScenario.nominal(FaultKind.F7_TorqueOffset).torque_offset == 2000.0
    with pytest.raises(InvalidArgument):
        FaultScenario(FaultKind.Healthy, sensor_gain=1.2)
    with pytest.raises(InvalidArgument):
        FaultScenario(FaultKind.F4_GenSpeedGain)


def test_scenario_round_trip_and_parse():
    for kind in FaultKind:
        sc = FaultScenario.nominal(kind)
        assert FaultScenario.from_dict(sc.to_dict()) == sc
    assert FaultKind.parse("F3") is FaultKind.F3_HydraulicLeak
    assert FaultKind.parse("healthy") is FaultKind.Healthy
    with pytest.raises(InvalidArgument):
        FaultKind.parse("F9")


# ---------------------------------------------------------------- wind

def test_wind_mean_and_std():
    w = generate_wind(7, 600.0, DT, 18.2, 0.10)
    assert 17.3 <= w.samples.mean() <= 19.1
    assert abs(w.samples.std() - 1.82) <= 0.2 * 1.82
    assert np.isfinite(w.samples).all()


def test_wind_zero_turbulence_constant():
    w = generate_wind(3, 10.0, DT, 18.2, 0.0)
    assert np.all(w.samples == 18.2)


@pytest.mark.parametrize("args", [(0, 0.0, DT, 18.2, 0.1), (0, 10.0, 0.0, 18.2, 0.1),
                                  (0, 10.0, DT, -1.0, 0.1), (0, 10.0, DT, 18.2, -0.1)])
def test_wind_rejects_bad_arguments(args):
    with pytest.raises(InvalidArgument):
        generate_wind(*args)


def test_wind_periodogram_slope():
    from scipy.signal import welch

    w = generate_wind(7, 600.0, DT, 18.2, 0.10)
    f, pxx = welch(w.samples - w.samples.mean(), fs=80.0, nperseg=8192)
    band = (f >= 0.1) & (f <= 5.0)
    slope = np.polyfit(np.log(f[band]), np.log(pxx[band]), 1)[0]
    assert abs(slope - (-5.0 / 3.0)) <= 0.2 * 5.0 / 3.0


def test_kaimal_psd_integrates_to_variance():
    from scipy.integrate import quad

    var, _ = quad(lambda f: kaimal_psd(f, 18.2, 1.82), 0, np.inf, limit=400)
    assert var == pytest.approx(1.82**2, rel=1e-6)


def test_wind_is_seed_deterministic():
    a = generate_wind(5, 20.0, DT, 18.2, 0.1).samples
    b = generate_wind(5, 20.0, DT, 18.2, 0.1).samples
    c = generate_wind(6, 20.0, DT, 18.2, 0.1).samples
    assert np.array_equal(a, b) and not np.array_equal(a, c)


# ---------------------------------------------------------------- generator

def test_generator_fixed_point():
    assert step_generator(40000.0, 40000.0, DT) == 40000.0


def test_generator_free_decay_oracle():
    tau, n = 1000.0, 8  # 8 steps of 1/80 s = 0.1 s
    for _ in range(n):
        tau = step_generator(tau, 0.0, DT)
    assert tau == pytest.approx(1000.0 * math.exp(-50 * 0.1), rel=1e-6)


def test_generator_step_oracle_every_sample():
    tau = 0.0
    for k in range(1, 81):
        tau = step_generator(tau, 40000.0, DT)
        exact = 40000.0 * (1 - math.exp(-50 * k * DT))
        assert abs(tau - exact) <= 1e-6 * exact


def test_generator_power_values():
    assert generator_power(122.91, 40680.0) == pytest.approx(4.900e6, rel=1e-3)
    assert generator_power(122.91, 0.0) == 0.0
    assert generator_power(0.0, 40000.0) == 0.0


def test_generator_rejects_bad_dt():
    with pytest.raises(InvalidArgument):
        step_generator(0.0, 1.0, 0.0)


# ---------------------------------------------------------------- pitch actuator

def test_pitch_step_matches_analytic():
    y = pitch_step(0.7, 11.11, 160)
    t = np.arange(161) * DT
    assert np.max(np.abs(y - underdamped_step(t, 0.7, 11.11))) <= 1e-3


@pytest.mark.parametrize("kind", [FaultKind.F1_HighAir, FaultKind.F2_PumpWear])
def test_faulty_pitch_step_matches_analytic(kind):
    sc = FaultScenario.nominal(kind)
    y = pitch_step(sc.pitch_zeta, sc.pitch_wn, 240)
    t = np.arange(241) * DT
    assert np.max(np.abs(y - underdamped_step(t, sc.pitch_zeta, sc.pitch_wn))) <= 1e-3


def test_pitch_unit_dc_gain():
    y = pitch_step(0.7, 11.11, 800, command=10.0)
    assert y[-1] == pytest.approx(10.0, abs=1e-9)


def test_f1_rise_time_slower_than_nominal():
    fine = 1e-3
    nominal = rise_time(pitch_step(0.7, 11.11, 3000, dt=fine), fine)
    faulty = rise_time(pitch_step(0.45, 5.73, 3000, dt=fine), fine)
    assert faulty > nominal


def test_pitch_rejects_bad_parameters():
    with pytest.raises(InvalidArgument):
        step_pitch_actuator(0.0, 0.0, 1.0, 0.0, 11.11, DT)
    with pytest.raises(InvalidArgument):
        step_pitch_actuator(0.0, 0.0, 1.0, 0.7, -1.0, DT)


# ---------------------------------------------------------------- controllers

def test_torque_controller_values():
    assert torque_controller(5.0e6, 122.91) == pytest.approx(40680.0, rel=1e-3)
    assert torque_controller(0.0, 100.0) == 0.0
    assert torque_controller(5.0e6, 0.0) == P.torque_max


def test_pitch_controller_zero_error():
    cmd, integ = pitch_controller(P.rated_generator_speed, P.rated_generator_speed, 0.0, DT)
    assert cmd == 0.0 and integ == 0.0


def test_pitch_controller_integral_oracle():
    # hold the schedule at 0 deg so the gains stay frozen
    e, n, integ = 0.5, 400, 0.0
    for _ in range(n):
        _, integ = pitch_controller(P.rated_generator_speed + e, P.rated_generator_speed,
                                    integ, DT, schedule_pitch=0.0)
    assert integ == pytest.approx(P.pitch_ki * e * n * DT, rel=1e-12)


def test_pitch_controller_antiwindup_clamps():
    cmd, integ = pitch_controller(1e4, P.rated_generator_speed, 89.0, DT)
    assert cmd == 90.0 and integ == 90.0
    cmd, integ = pitch_controller(0.0, P.rated_generator_speed, 0.0, DT)
    assert cmd == 0.0 and integ == 0.0


@given(st.floats(0, 90), st.floats(0, 90))
def test_gain_schedule_decreasing(a, b):
    lo, hi = sorted((a, b))
    assert gain_factor(hi) <= gain_factor(lo) <= 1.0


# ---------------------------------------------------------------- rotor

def test_rotor_torque_balance_is_fixed_point():
    w, v, beta = 1.25, 18.2, 20.0
    tg = aero_torque(w, v, beta) / P.gearbox_ratio
    assert step_rotor(w, v, beta, tg, 1 / 160) == pytest.approx(w, rel=1e-14)


def test_rotor_feathered_decelerates():
    assert abs(aero_torque(1.2, 18.2, 90.0)) < 1e-6
    assert step_rotor(1.2, 18.2, 90.0, 40000.0, 1 / 160) < 1.2


def test_rotor_energy_bookkeeping():
    w, v, beta, tg, dt = 1.2, 14.0, 5.0, 30000.0, 1 / 160
    w1 = step_rotor(w, v, beta, tg, dt)
    lhs = P.rotor_inertia * (w1**2 - w**2) / 2.0
    # midpoint power times dt: second-order quadrature of the exact work integral
    wm = 0.5 * (w + w1)
    rhs = (aero_torque(wm, v, beta) - P.gearbox_ratio * tg) * wm * dt
    assert abs(lhs - rhs) <= 1e-6 * abs(lhs)


def test_rotor_nonpositive_speed_diverges():
    with pytest.raises(SimulationDiverged):
        step_rotor(0.0, 18.2, 10.0, 40000.0, 1 / 160)


def test_rated_power_near_rated_wind():
    """Optimal C_p at zero pitch delivers rated power close to 11.4 m/s."""
    from scipy.optimize import brentq, minimize_scalar

    from windfault.turbsim.plant import power_coefficient

    cp_max = -minimize_scalar(lambda lam: -power_coefficient(lam, 0.0), bounds=(2, 14),
                              method="bounded").fun
    r = P.rotor_radius
    v = brentq(lambda u: 0.5 * P.air_density * math.pi * r * r * u**3 * cp_max
               * P.generator_efficiency - P.rated_power, 5, 20)
    assert abs(v - 11.4) <= 0.5


# ---------------------------------------------------------------- faults

def test_fault_healthy_identity():
    r = Readings(1.2, 117.6, 40000.0, (10.0, 10.0, 10.0))
    a = ActuatorParams.nominal(P)
    assert apply_fault(r, a, FaultScenario.nominal(FaultKind.Healthy), 3.0) == (r, a)


def test_fault_f4_reports_scaled_speed():
    r = Readings(100 / 98, 100.0, 40000.0, (10.0, 10.0, 10.0))
    seen, act = apply_fault(r, ActuatorParams.nominal(P),
                            FaultScenario.nominal(FaultKind.F4_GenSpeedGain), 0.0)
    assert seen.generator_speed == pytest.approx(120.0, abs=1e-12)
    assert r.generator_speed == 100.0 and act == ActuatorParams.nominal(P)


def test_fault_f1_changes_dynamics_only():
    r = Readings(1.2, 117.6, 40000.0, (10.0, 11.0, 12.0))
    sc = FaultScenario.nominal(FaultKind.F1_HighAir)
    seen, act = apply_fault(r, ActuatorParams.nominal(P), sc, 0.0)
    assert seen == r
    assert act.pitch[sc.blade] == (0.45, 5.73)
    assert sum(p == (0.7, 11.11) for p in act.pitch) == 2


def test_fault_inactive_interval():
    sc = FaultScenario.nominal(FaultKind.F7_TorqueOffset, active_interval=(5.0, 10.0))
    a = ActuatorParams.nominal(P)
    r = Readings(1.2, 117.6, 40000.0, (10.0, 10.0, 10.0))
    assert apply_fault(r, a, sc, 1.0)[1].torque_offset == 0.0
    assert apply_fault(r, a, sc, 6.0)[1].torque_offset == 2000.0


def test_fault_rejects_non_scenario():
    with pytest.raises(InvalidArgument):
        apply_fault(Readings(1, 1, 1, (0, 0, 0)), ActuatorParams.nominal(P), "F1", 0.0)


# ---------------------------------------------------------------- closed loop

@pytest.fixture(scope="module")
def runs():
    wind = generate_wind(7, 30.0, P.internal_dt, 18.2, 0.10)
    out = {}
    for kind in FaultKind:
        out[kind] = run_simulation(P, FaultScenario.nominal(kind), wind, 30.0,
                                   run_id=kind.name, return_internal=True)
    return out


def test_trace_shape_and_label(runs):
    trace, _ = runs[FaultKind.F3_HydraulicLeak]
    assert trace.values.shape == (30 * 80, 5)
    assert trace.label == 3
    assert np.isfinite(trace.values).all()


def test_pitch_within_limits(runs):
    for _, internal in runs.values():
        pitch = internal[:, 2:5]
        assert pitch.min() >= 0.0 and pitch.max() <= 90.0


def test_generator_speed_is_gearbox_times_rotor(runs):
    _, internal = runs[FaultKind.Healthy]
    gi = INTERNAL_CHANNELS.index("generator_speed")
    assert np.array_equal(internal[:, gi], P.gearbox_ratio * internal[:, 0])


def test_f4_reported_speed_exact(runs):
    _, internal = runs[FaultKind.F4_GenSpeedGain]
    true = internal[:, INTERNAL_CHANNELS.index("generator_speed")]
    seen = internal[:, INTERNAL_CHANNELS.index("measured_generator_speed")]
    assert np.array_equal(seen, 1.2 * true)


@pytest.mark.parametrize("kind,value", [(FaultKind.F5_PitchFixed10, 10.0),
                                        (FaultKind.F6_PitchFixed5, 5.0)])
def test_fixed_pitch_channel(runs, kind, value):
    trace, _ = runs[kind]
    assert np.all(trace.values[:, 2] == value)


def test_f7_converter_offset(runs):
    _, internal = runs[FaultKind.F7_TorqueOffset]
    ctrl = internal[:, INTERNAL_CHANNELS.index("controller_torque")]
    conv = internal[:, INTERNAL_CHANNELS.index("converter_input")]
    assert np.all(conv - ctrl == 2000.0)


@pytest.mark.parametrize("kind", [FaultKind.F5_PitchFixed10, FaultKind.F6_PitchFixed5])
def test_sensor_faults_leave_state_untouched(runs, kind):
    _, healthy = runs[FaultKind.Healthy]
    _, faulty = runs[kind]
    assert np.array_equal(healthy[:, :8], faulty[:, :8])


def test_speed_sensor_fault_feeds_controller(runs):
    """The controller consumes the faulty reading, so the true state moves."""
    _, healthy = runs[FaultKind.Healthy]
    _, faulty = runs[FaultKind.F4_GenSpeedGain]
    assert faulty[-800:, 0].mean() < 0.9 * healthy[-800:, 0].mean()


@pytest.mark.parametrize("kind", [FaultKind.F1_HighAir, FaultKind.F2_PumpWear,
                                  FaultKind.F3_HydraulicLeak, FaultKind.F7_TorqueOffset])
def test_actuator_faults_have_identity_sensors(runs, kind):
    trace, internal = runs[kind]
    assert np.array_equal(trace.values, internal[:, :5])


def test_scenarios_pairwise_distinguishable(runs):
    kinds = list(FaultKind)
    for i, a in enumerate(kinds):
        for b in kinds[i + 1:]:
            assert not np.array_equal(runs[a][0].values, runs[b][0].values), (a, b)


def test_simulation_deterministic():
    sc = FaultScenario.nominal(FaultKind.F2_PumpWear)
    a = simulate_run(sc, 3, 5.0)
    b = simulate_run(sc, 3, 5.0)
    assert np.array_equal(a.values, b.values)


@pytest.mark.slow
def test_closed_loop_regulation():
    trace, internal = run_simulation(P, FaultScenario.nominal(FaultKind.Healthy),
                                     generate_wind(7, 600.0, P.internal_dt, 18.2, 0.10), 600.0,
                                     return_internal=True)
    gen = internal[60 * 80:, INTERNAL_CHANNELS.index("generator_speed")]
    assert abs(gen.mean() - 122.91) <= 0.05 * 122.91
    assert trace.values.shape == (48000, 5)


def test_simulation_rejects_fractional_duration():
    wind = generate_wind(1, 2.0, P.internal_dt, 18.2, 0.1)
    with pytest.raises(InvalidArgument):
        run_simulation(P, FaultScenario.nominal(FaultKind.Healthy), wind, 1.0001)


def test_trace_io_round_trip(tmp_path):
    trace = simulate_run(FaultScenario.nominal(FaultKind.F5_PitchFixed10), 2, 2.0)
    back = load_trace(save_trace(trace, tmp_path / "t.npz"))
    assert np.array_equal(back.values, trace.values)
    assert back.label == trace.label and back.wind_seed == trace.wind_seed
    assert back.scenario == trace.scenario


def test_corpus_manifest(tmp_path):
    man = simulate_corpus(tmp_path, {"Healthy": 2, "F7": 1}, 2.0, seed=4)
    assert [r["label"] for r in man["runs"]] == [0, 0, 7]
    assert len({r["wind_seed"] for r in man["runs"]}) == 3
    again = read_manifest(tmp_path)
    assert again["runs"] == man["runs"]
    (tmp_path / "manifest.json").write_text('{"runs": []}')
    with pytest.raises(InvalidArgument):
        read_manifest(tmp_path)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 60.0), st.floats(-1e3, 1e3), st.floats(0.0, 60.0))
def test_pitch_step_is_affine_in_offset(beta, rate, cmd):
    """Exact ZOH: shifting pitch and command by the same amount shifts the result."""
    b1, r1 = step_pitch_actuator(beta, rate, cmd, 0.7, 11.11, DT)
    b2, r2 = step_pitch_actuator(beta + 5.0, rate, cmd + 5.0, 0.7, 11.11, DT)
    assert b2 - b1 == pytest.approx(5.0, abs=1e-9)
    assert r2 == pytest.approx(r1, abs=1e-9)


def test_corpus_resimulates_stale_traces(tmp_path):
    simulate_corpus(tmp_path, {"F2": 1}, 2.0, seed=1)
    first = load_trace(tmp_path / "F2_PumpWear-000.npz")
    man = simulate_corpus(tmp_path, {"F2": 1}, 2.0, seed=2)
    second = load_trace(tmp_path / "F2_PumpWear-000.npz")
    assert second.wind_seed == man["runs"][0]["wind_seed"] != first.wind_seed
    simulate_corpus(tmp_path, {"F2": 1}, 2.0, seed=2, mean_speed=15.0)
    assert load_trace(tmp_path / "F2_PumpWear-000.npz").wind["mean_speed"] == 15.0


def test_corpus_first_index(tmp_path):
    man = simulate_corpus(tmp_path, {"F3": 2}, 2.0, seed=1, first_index={"F3": 5})
    assert [r["run_id"] for r in man["runs"]] == ["F3_HydraulicLeak-005", "F3_HydraulicLeak-006"]
