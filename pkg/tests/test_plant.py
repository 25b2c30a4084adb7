import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from spinfeedback.errors import ConfigError
from spinfeedback.feedback import KINDS, ProtocolConfig, build_circuit
from spinfeedback.plant import (
    Circuit, ControlState, ExchangePulse, Measure, PlantState, SensorModel, Spam, SqrtX,
    SqrtYMinus, SqrtYPlus, Wait, X, calibrated_control, evolve, flip_probability,
    gate_unitary, ideal_v_j, quantize_time, run_circuit, sample_shots, sensor_integral,
    sensor_target,
)

PLANT = PlantState()
SENSOR = SensorModel()
CAL = calibrated_control(PLANT, SENSOR)
CIRCUIT_KINDS = [k for k in KINDS if k.value != "Detuning"]
ELEMENTS = [SqrtX(1), SqrtX(2), X(1), X(2), SqrtYPlus(1), SqrtYMinus(2), Wait(37e-9),
            ExchangePulse(1), ExchangePulse(7)]


def pair(kind, **kw):
    return build_circuit(ProtocolConfig(kind, **kw))


def test_sqrt_x_twice_flips():
    ctrl = dataclasses.replace(CAL, amp_1=1 / (4 * PLANT.f_rabi_1 * CAL.t_pi2_1))
    p = flip_probability(Circuit((SqrtX(1), SqrtX(1), Measure(1))), PLANT, ctrl)
    assert p == pytest.approx(1.0, abs=1e-12)


def test_wait_with_zero_detuning_is_identity():
    u = gate_unitary(Wait(123e-9), PLANT, CAL)
    np.testing.assert_allclose(u, np.eye(4), atol=1e-12)


def test_calibrated_exchange_is_cz():
    plant = dataclasses.replace(PLANT, phi_z1=0.0, phi_z2=0.0)
    ctrl = dataclasses.replace(calibrated_control(plant), phase_1=0.0, phase_2=0.0)
    u = gate_unitary(ExchangePulse(1), plant, ctrl)
    u = u / u[0, 0]
    np.testing.assert_allclose(u, np.diag([1, 1, 1, -1]), atol=1e-12)


@pytest.mark.parametrize("el", ELEMENTS, ids=repr)
def test_unitarity(el):
    ctrl = dataclasses.replace(CAL, amp_1=1.07, f_if_2=CAL.f_if_2 + 3e5, v_j=CAL.v_j + 0.4)
    u = gate_unitary(el, PLANT, ctrl)
    assert np.max(np.abs(u.conj().T @ u - np.eye(4))) < 1e-12


@pytest.mark.parametrize("el", ELEMENTS, ids=repr)
def test_gate_matches_oracle_element(el):
    ctrl = dataclasses.replace(CAL, amp_2=0.93, f_if_1=CAL.f_if_1 - 2e5, phase_1=0.3)
    name = {SqrtX: "sx", X: "x", SqrtYPlus: "y+", SqrtYMinus: "y-", Wait: "wait",
            ExchangePulse: "cz"}[type(el)]
    arg = {Wait: getattr(el, "t", None), ExchangePulse: getattr(el, "repeats", None)}.get(
        type(el), getattr(el, "qubit", None))
    ref = oracle.element(name, arg, dataclasses.asdict(PLANT), dataclasses.asdict(ctrl))
    np.testing.assert_allclose(gate_unitary(el, PLANT, ctrl), ref, atol=1e-12)


@pytest.mark.parametrize("kind", CIRCUIT_KINDS, ids=lambda k: k.value)
def test_calibrated_fixed_point(kind):
    probs = run_circuit(pair(kind), PLANT, CAL)
    assert probs.p_flip_plus == pytest.approx(0.5, abs=1e-10)
    assert probs.p_flip_minus == pytest.approx(0.5, abs=1e-10)


def test_larmor_quarter_period_full_contrast():
    # 2.5 MHz detuning over 100 ns is a quarter turn
    ctrl = dataclasses.replace(CAL, f_if_1=PLANT.f_larmor_1 - 2.5e6)
    probs = run_circuit(pair("LarmorQ1"), PLANT, ctrl)
    assert abs(probs.p_flip_plus - probs.p_flip_minus) == pytest.approx(1.0, abs=1e-10)
    ref = oracle.probs("LarmorQ1", dataclasses.asdict(PLANT), dataclasses.asdict(ctrl))
    assert abs(ref[0] - ref[1]) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("df", np.linspace(-4e6, 4e6, 21))
def test_larmor_difference_is_sine(df):
    ctrl = dataclasses.replace(CAL, f_if_2=PLANT.f_larmor_2 - df)
    probs = run_circuit(pair("LarmorQ2"), PLANT, ctrl)
    # sign convention: d = p_plus - p_minus = +sin(2 pi df t_wait), df = f_larmor - f_if
    d = probs.p_flip_plus - probs.p_flip_minus
    assert d == pytest.approx(math.sin(2 * math.pi * df * 100e-9), abs=1e-10)
    ref = oracle.probs("LarmorQ2", dataclasses.asdict(PLANT), dataclasses.asdict(ctrl))
    assert d == pytest.approx(ref[0] - ref[1], abs=1e-10)


def test_rabi_calibrated_both_half():
    for n in (1, 3, 5):
        probs = run_circuit(pair("RabiQ1", n_rabi=n), PLANT, CAL)
        np.testing.assert_allclose(probs, [0.5, 0.5], atol=1e-10)


@pytest.mark.parametrize("n_cz,span", [(1, 0.1), (3, 0.1), (5, 0.1), (7, 0.07)])
def test_exchange_monotonic_in_j(n_cz, span):
    # d ~ sin(n pi dJ/J): monotonic while |dJ/J| <= 1/(2n)
    j_cal = PLANT.exchange(CAL.v_j)
    ds = []
    for frac in np.linspace(-span, span, 41):
        v = PLANT.j_lever * math.log(j_cal * (1 + frac) / PLANT.j_ref)
        probs = run_circuit(pair("ExchangeLevel", n_cz=n_cz), PLANT,
                            dataclasses.replace(CAL, v_j=v))
        ds.append(probs.p_flip_plus - probs.p_flip_minus)
    steps = np.diff(ds)
    assert np.all(steps > 0) or np.all(steps < 0)


def test_phase_protocol_blind_to_exchange():
    # spectator in |0> sees no conditional phase error
    ctrl = dataclasses.replace(CAL, v_j=CAL.v_j + 0.5)
    for kind in ("PhaseQ1", "PhaseQ2"):
        probs = run_circuit(pair(kind), PLANT, ctrl)
        np.testing.assert_allclose(probs, [0.5, 0.5], atol=1e-10)


def test_norm_preserved():
    ctrl = dataclasses.replace(CAL, amp_1=1.2, amp_2=0.7, f_if_1=CAL.f_if_1 + 1e6, v_j=8.0)
    elements = ELEMENTS * 5
    psi = evolve(elements, PLANT, ctrl)
    assert sum(abs(a) ** 2 for a in psi) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(df=st.floats(-3e6, 3e6), amp=st.floats(0.8, 1.2), dv=st.floats(-0.5, 0.5),
       dphi=st.floats(-1, 1), kind=st.sampled_from(CIRCUIT_KINDS))
def test_run_circuit_matches_oracle_property(df, amp, dv, dphi, kind):
    ctrl = dataclasses.replace(CAL, f_if_1=CAL.f_if_1 + df, f_if_2=CAL.f_if_2 - df,
                               amp_1=amp, amp_2=2 - amp, v_j=CAL.v_j + dv,
                               phase_1=CAL.phase_1 + dphi, phase_2=CAL.phase_2 - dphi)
    got = run_circuit(pair(kind), PLANT, ctrl)
    ref = oracle.probs(kind.value, dataclasses.asdict(PLANT), dataclasses.asdict(ctrl))
    np.testing.assert_allclose(got, ref, atol=1e-10)
    assert 0 <= got.p_flip_plus <= 1 and 0 <= got.p_flip_minus <= 1


def test_circuit_validation():
    with pytest.raises(ValueError):
        Circuit((SqrtX(1),))
    with pytest.raises(ValueError):
        Circuit((Measure(1), SqrtX(1), Measure(1)))
    with pytest.raises(ValueError):
        SqrtX(3)
    with pytest.raises(ValueError):
        ExchangePulse(0)


def test_quantize_time():
    assert quantize_time(501e-9) == pytest.approx(500e-9)
    assert quantize_time(503e-9) == pytest.approx(504e-9)
    assert quantize_time(1e-10) == pytest.approx(4e-9)
    assert CAL.t_pi2_1 / 4e-9 == pytest.approx(round(CAL.t_pi2_1 / 4e-9))


def test_ideal_v_j_gives_half_turn():
    v = ideal_v_j(PLANT, 200e-9)
    assert PLANT.exchange(v) * 200e-9 == pytest.approx(0.5)


def test_plant_validation():
    with pytest.raises(ConfigError, match="plant.f_rabi_1"):
        PlantState(f_rabi_1=-1.0)
    with pytest.raises(ConfigError, match="j_lever"):
        PlantState(j_lever=0.0)
    with pytest.raises(ConfigError, match="amp_1"):
        dataclasses.replace(CAL, amp_1=0.0)


# -- shots --------------------------------------------------------------------


def test_shots_extremes():
    rng = np.random.default_rng(1)
    assert all(sample_shots(0.0, 20, rng) == 0 for _ in range(100))
    assert all(sample_shots(1.0, 20, rng) == 20 for _ in range(100))


def test_shot_moments():
    rng = np.random.default_rng(2)
    counts = np.array([sample_shots(0.5, 20, rng) for _ in range(10_000)])
    assert abs(counts.mean() - 10) < 0.15
    assert abs(counts.var() - 5) < 0.5


def test_shot_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sample_shots(1.2, 20, rng)
    with pytest.raises(ValueError):
        sample_shots(0.5, 0, rng)


def test_spam_channel():
    spam = Spam(f0=0.9, f1=0.8)
    assert spam.apply(0.0) == pytest.approx(0.1)
    assert spam.apply(1.0) == pytest.approx(0.8)
    rng = np.random.default_rng(3)
    counts = [sample_shots(0.0, 100, rng, spam) for _ in range(2000)]
    assert np.mean(counts) == pytest.approx(10, abs=0.5)


# -- sensor -------------------------------------------------------------------


def test_sensor_mid_window():
    r = sensor_integral(PLANT, CAL, SENSOR)
    assert r.in_range
    assert r.integral == pytest.approx(SENSOR.i_base * SENSOR.span + SENSOR.delta_i * SENSOR.span / 2,
                                       rel=1e-12)
    assert r.integral == pytest.approx(sensor_target(SENSOR), rel=1e-12)


def test_sensor_shift_slope():
    base = sensor_integral(PLANT, CAL, SENSOR).integral
    moved = sensor_integral(dataclasses.replace(PLANT, eps_anticrossing=0.1), CAL, SENSOR).integral
    assert base - moved == pytest.approx(SENSOR.delta_i * 0.1, rel=0.01)


def test_sensor_flat_without_step():
    model = SensorModel(delta_i=0.0)
    a = sensor_integral(PLANT, CAL, model).integral
    b = sensor_integral(dataclasses.replace(PLANT, eps_anticrossing=0.4), CAL, model).integral
    assert a == b


def test_sensor_matches_quadrature():
    from scipy.integrate import quad
    plant = dataclasses.replace(PLANT, eps_anticrossing=0.93)
    m = SENSOR
    center = plant.eps_anticrossing - CAL.eps_offset
    f = lambda e: m.i_base + m.delta_i / (1 + math.exp(-(e - center) / m.width))
    ref, _ = quad(f, m.sweep_lo, m.sweep_hi, points=[center], limit=200)
    assert sensor_integral(plant, CAL, m).integral == pytest.approx(ref, rel=1e-9)


def test_sensor_out_of_range_flag():
    plant = dataclasses.replace(PLANT, eps_anticrossing=1.5)
    assert not sensor_integral(plant, CAL, SENSOR).in_range
