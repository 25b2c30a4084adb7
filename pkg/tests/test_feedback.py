import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinfeedback.errors import ConfigError, SessionAbort
from spinfeedback.feedback import (
    CONTROL_FIELD, KINDS, ProtocolConfig, ProtocolKind, SensorSweep, SessionConfig,
    apply_correction, build_circuit, correction_for, estimate_deviation, normalize,
    resolve_protocol, run_session, sensitivity, tracking_error,
)
from spinfeedback.noise import DriftSpec, FluctuatorSpec, NoiseProcessSpec
from spinfeedback.plant import (
    CONTROL_FIELDS, ExchangePulse, Measure, PlantState, SqrtX, SqrtYMinus, SqrtYPlus, Wait, X,
    calibrated_control,
)

PLANT = PlantState()
CTRL = calibrated_control(PLANT)
K = ProtocolKind


def resolved(kind, **kw):
    return resolve_protocol(ProtocolConfig(kind, **kw), PLANT, CTRL)


def one(kind, **kw):
    """A session running a single protocol."""
    proto = kw.pop("proto", {})
    return SessionConfig(protocols=(ProtocolConfig(kind, **proto),), **kw)


# -- circuits ------------------------------------------------------------------


def test_larmor_circuit_layout():
    pair = build_circuit(ProtocolConfig(K.LARMOR_Q1))
    assert pair.plus.elements == (SqrtX(1), Wait(100e-9), SqrtYPlus(1), Measure(1))
    assert pair.minus.elements[2] == SqrtYMinus(1)


def test_exchange_circuit_flips_q2_first():
    el = build_circuit(ProtocolConfig(K.EXCHANGE)).plus.elements
    assert el[:3] == (SqrtX(1), X(2), ExchangePulse(7))


def test_phase_q2_leaves_q1_bare():
    el = build_circuit(ProtocolConfig(K.PHASE_Q2)).plus.elements
    assert el == (SqrtX(2), ExchangePulse(1), SqrtYPlus(2), Measure(2))


def test_rabi_circuit_lengths():
    pair = build_circuit(ProtocolConfig(K.RABI_Q2, n_rabi=5))
    assert len(pair.plus) == 6 and len(pair.minus) == 8


def test_detuning_is_sensor_sweep():
    assert isinstance(build_circuit(ProtocolConfig(K.DETUNING)), SensorSweep)


@pytest.mark.parametrize("kw", [dict(gain=0.0), dict(gain=2.0), dict(gain=3.0),
                                dict(n_shots=0), dict(n_rabi=4), dict(clamp=0.0),
                                dict(n_cz=0), dict(t_wait=-1e-9), dict(rabi_target="x")])
def test_protocol_validation(kw):
    with pytest.raises(ConfigError):
        ProtocolConfig(K.LARMOR_Q1, **kw)


def test_gain_error_names_field():
    with pytest.raises(ConfigError) as err:
        ProtocolConfig("RabiQ2", gain=3.0)
    assert err.value.field == "protocols.RabiQ2.gain"


def test_unknown_kind():
    with pytest.raises(ConfigError, match="unknown protocol"):
        ProtocolConfig("Ramsey")


def test_each_kind_owns_one_field():
    assert len(set(CONTROL_FIELD.values())) == len(KINDS)


# -- estimator -----------------------------------------------------------------


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: k.value)
def test_calibrated_estimate_is_zero(kind):
    d = estimate_deviation(ProtocolConfig(kind, n_shots=None), PLANT, CTRL).d
    assert abs(d) < 1e-10


def test_larmor_quarter_turn_gives_unit_d():
    plant = dataclasses.replace(PLANT, f_larmor_1=PLANT.f_larmor_1 + 1 / (4 * 100e-9))
    d = estimate_deviation(ProtocolConfig(K.LARMOR_Q1, n_shots=None), plant, CTRL).d
    assert abs(d) == pytest.approx(1.0, abs=1e-12)


def test_shot_noise_std():
    cfg = ProtocolConfig(K.LARMOR_Q1, n_shots=20)
    rng = np.random.default_rng(1)
    d = np.array([estimate_deviation(cfg, PLANT, CTRL, rng).d for _ in range(20_000)])
    assert abs(d.mean()) < 4 * 0.158 / math.sqrt(len(d))
    assert d.std() == pytest.approx(math.sqrt(2 * 0.25 / 20), rel=0.03)


def test_detuning_reads_offset_in_mV():
    plant = dataclasses.replace(PLANT, eps_anticrossing=0.2)
    d = estimate_deviation(ProtocolConfig(K.DETUNING), plant, CTRL)
    # transition 0.2 mV right of centre: linear away from the window edges
    assert d.d == pytest.approx(0.2, abs=1e-6) and d.in_range


def test_detuning_out_of_range_clamped():
    plant = dataclasses.replace(PLANT, eps_anticrossing=5.0)
    d = estimate_deviation(ProtocolConfig(K.DETUNING), plant, CTRL)
    assert not d.in_range
    assert d.d == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("kind", [K.LARMOR_Q1, K.RABI_Q1, K.EXCHANGE, K.PHASE_Q2],
                         ids=lambda k: k.value)
def test_sensitivity_matches_finite_difference(kind):
    cfg = ProtocolConfig(kind, n_shots=None)
    name = cfg.control_field
    h = 1e-6 * max(abs(getattr(CTRL, name)), 1.0)
    if kind is K.LARMOR_Q1:
        h = 10.0
    up = dataclasses.replace(CTRL, **{name: getattr(CTRL, name) + h})
    dn = dataclasses.replace(CTRL, **{name: getattr(CTRL, name) - h})
    slope = (estimate_deviation(cfg, PLANT, up).d - estimate_deviation(cfg, PLANT, dn).d) / (2 * h)
    assert slope == pytest.approx(sensitivity(cfg, PLANT, CTRL), rel=1e-4)


# -- update law ----------------------------------------------------------------


def test_update_law_arithmetic():
    cfg = ProtocolConfig(K.LARMOR_Q1, gain=0.5, scale=1e3)
    new = apply_correction(CTRL, cfg, 0.4)
    assert new.f_if_1 - CTRL.f_if_1 == pytest.approx(-200.0, abs=1e-6)


def test_zero_d_leaves_state():
    cfg = resolved(K.RABI_Q1)
    assert apply_correction(CTRL, cfg, 0.0) is CTRL


def test_clamp_is_exact():
    cfg = ProtocolConfig(K.LARMOR_Q1, gain=0.5, scale=1e3, clamp=50.0)
    assert correction_for(cfg, 0.9) == -50.0
    assert correction_for(cfg, -0.9) == 50.0
    assert correction_for(cfg, 0.05) == pytest.approx(-25.0)


def test_default_clamp_ten_shot_floors():
    cfg = resolved(K.LARMOR_Q1)
    assert cfg.clamp == pytest.approx(10 * abs(cfg.scale) * math.sqrt(0.5 / 20))
    assert cfg.scale == pytest.approx(-1 / (2 * math.pi * 100e-9))


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: k.value)
def test_correction_touches_only_its_field(kind):
    cfg = resolved(kind)
    new = apply_correction(CTRL, cfg, 0.01)
    changed = [f for f in CONTROL_FIELDS if getattr(new, f) != getattr(CTRL, f)]
    assert changed == [cfg.control_field]


def test_burst_time_requantized():
    cfg = resolved(K.RABI_Q1, rabi_target="t_pi2")
    new = apply_correction(CTRL, cfg, 0.3)
    assert new.t_pi2_1 / 4e-9 == pytest.approx(round(new.t_pi2_1 / 4e-9), abs=1e-9)
    assert new.t_pi2_1 != CTRL.t_pi2_1


def test_nonpositive_amplitude_aborts():
    cfg = ProtocolConfig(K.RABI_Q1, gain=1.0, scale=10.0)
    with pytest.raises(SessionAbort) as err:
        apply_correction(CTRL, cfg, 0.5, cycle=17)
    assert err.value.cycle == 17


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(0.01, 1.99))
def test_correction_bounded_by_clamp(d, gain):
    cfg = resolved(K.PHASE_Q1, gain=gain)
    assert abs(correction_for(cfg, d)) <= cfg.clamp


# -- sessions ------------------------------------------------------------------


def test_default_row_count():
    s = SessionConfig()
    assert s.n_cycles == 54_200


def test_short_session_rows():
    log = run_session(SessionConfig(duration=6.0))
    assert set(log.kinds) == set(KINDS)
    for series in log.series.values():
        assert len(series) == 10
        np.testing.assert_allclose(series.time_s, 0.6 * np.arange(1, 11))


def test_zero_noise_calibrated_is_flat():
    protos = tuple(ProtocolConfig(k, n_shots=None, gain=0.5) for k in KINDS)
    log = run_session(SessionConfig(duration=60.0, protocols=protos))
    for series in log.series.values():
        np.testing.assert_allclose(series.value_normalized, series.value_normalized[0], atol=1e-12)
        assert series.value_normalized[0] == (1.0 if series.normalization == "divide" else 0.0)


def test_larmor_linear_recursion():
    # small offset: residual follows (1 - g)^k in the linear regime
    delta, g = 2e4, 0.5
    s = one(K.LARMOR_Q1, duration=6.0, control_offsets=(("f_if_1", delta),),
            proto=dict(gain=g, n_shots=None))
    err = run_session(s)[K.LARMOR_Q1].tracking_error
    expected = delta * (1 - g) ** np.arange(1, 11)
    np.testing.assert_allclose(err, expected, rtol=2e-3, atol=1e-6)


def test_larmor_eighth_turn_converges_in_three():
    delta = 1 / (8 * 100e-9)
    s = one(K.LARMOR_Q1, duration=1.8, control_offsets=(("f_if_1", delta),),
            proto=dict(gain=1.0, n_shots=None))
    err = run_session(s)[K.LARMOR_Q1].tracking_error
    assert abs(err[2]) < 0.01 * delta


@pytest.mark.parametrize("kind,field,offset", [
    (K.RABI_Q2, "amp_2", 0.02), (K.EXCHANGE, "v_j", 0.3), (K.PHASE_Q1, "phase_1", 0.3),
    (K.DETUNING, "eps_offset", 0.3), (K.LARMOR_Q2, "f_if_2", -4e5),
])
def test_each_protocol_converges(kind, field, offset):
    s = one(kind, duration=60.0, control_offsets=((field, offset),),
            proto=dict(gain=0.5, n_shots=None))
    err = np.abs(run_session(s)[kind].tracking_error)
    assert err[-1] < 1e-6 * abs(offset) + 1e-12
    assert np.all(np.diff(err) <= 1e-12 * abs(offset))


def test_open_loop_holds_control():
    noise = (NoiseProcessSpec("f_larmor_1", DriftSpec("linear", slope=10.0)),)
    log = run_session(SessionConfig(duration=30.0, noise=noise, open_loop=True))
    for series in log.series.values():
        assert np.all(series.correction == 0)
    err = log[K.LARMOR_Q1].tracking_error
    np.testing.assert_allclose(-err, 10.0 * 0.6 * np.arange(50), atol=1e-6)


def test_same_seed_bit_identical():
    noise = (NoiseProcessSpec("j_ref", FluctuatorSpec(5e4, 0.05, 0.05)),)
    a = run_session(SessionConfig(duration=60.0, noise=noise, seed=4))
    b = run_session(SessionConfig(duration=60.0, noise=noise, seed=4))
    c = run_session(SessionConfig(duration=60.0, noise=noise, seed=5))
    for k in KINDS:
        for col in ("value_raw", "estimator", "correction"):
            assert np.array_equal(getattr(a[k], col), getattr(b[k], col))
    assert not np.array_equal(a[K.LARMOR_Q1].estimator, c[K.LARMOR_Q1].estimator)


def test_protocol_rngs_independent_of_order():
    fwd = run_session(SessionConfig(duration=12.0, seed=3))
    rev = run_session(SessionConfig(duration=12.0, seed=3,
                                    protocols=tuple(reversed(SessionConfig().protocols))))
    # with no noise the plant is fixed; each protocol draws from its own stream
    np.testing.assert_array_equal(fwd[K.PHASE_Q2].estimator[:1], rev[K.PHASE_Q2].estimator[:1])


def test_round_robin_schedule():
    log = run_session(SessionConfig(duration=48.0, schedule="round_robin"))
    for i, kind in enumerate(KINDS):
        t = log[kind].time_s
        assert len(t) == 10
        np.testing.assert_allclose(np.diff(t), 8 * 0.6)
        assert t[0] == pytest.approx(0.6 * (i + 1))


def test_normalization_modes():
    log = run_session(SessionConfig(duration=6.0, seed=1))
    amp = log[K.RABI_Q1]
    assert amp.normalization == "divide"
    np.testing.assert_array_equal(amp.value_normalized, amp.value_raw / amp.value_raw[0])
    f = log[K.LARMOR_Q1]
    np.testing.assert_array_equal(f.value_normalized, f.value_raw - f.value_raw[0])
    np.testing.assert_array_equal(normalize([2.0, 3.0], "divide"), [1.0, 1.5])


def test_metadata_records_start_and_scales():
    s = SessionConfig(duration=6.0, control_offsets=(("v_j", 0.3),))
    meta = run_session(s, metadata={"tag": 1}).metadata
    assert meta["n_cycles"] == 10 and meta["tag"] == 1
    assert meta["initial_control"]["v_j"] == pytest.approx(CTRL.v_j + 0.3)
    rows = meta["protocols"]["ExchangeLevel"]
    assert rows["rows"] == 10 and rows["scale"] == pytest.approx(10.0 / (7 * math.pi))


def test_calibration_sees_first_tick():
    frozen = FluctuatorSpec(3e5, 1e-300, 1e-300, initial_state="high", convention="unipolar")
    noise = (NoiseProcessSpec("f_larmor_1", frozen),)
    protos = (ProtocolConfig(K.LARMOR_Q1, n_shots=None),)
    log = run_session(SessionConfig(duration=6.0, noise=noise, protocols=protos))
    assert log.metadata["initial_control"]["f_if_1"] == pytest.approx(PLANT.f_larmor_1 + 3e5)
    np.testing.assert_allclose(log[K.LARMOR_Q1].tracking_error, 0.0, atol=1e-6)


@pytest.mark.parametrize("kw", [dict(duration=0.3), dict(cycle_period=0.0),
                                dict(schedule="random"), dict(protocols=()),
                                dict(control_offsets=(("f_if_9", 1.0),))])
def test_session_validation(kw):
    with pytest.raises(ConfigError):
        SessionConfig(**kw)


def test_duplicate_protocol_rejected():
    with pytest.raises(ConfigError, match="twice"):
        SessionConfig(protocols=(ProtocolConfig(K.RABI_Q1), ProtocolConfig(K.RABI_Q1)))


def test_session_abort_carries_cycle():
    s = one(K.RABI_Q1, duration=30.0, control_offsets=(("amp_1", -0.2),),
            proto=dict(gain=1.9, n_shots=None, scale=5.0, clamp=10.0))
    with pytest.raises(SessionAbort) as err:
        run_session(s)
    assert err.value.cycle >= 0


def test_tracking_error_zero_when_calibrated():
    for kind in KINDS:
        assert tracking_error(kind, PLANT, CTRL) == pytest.approx(0.0, abs=1e-12)
