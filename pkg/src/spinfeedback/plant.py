"""Two-qubit spin plant: gate model, exact state-vector evolution, shot
sampling and the charge-sensor detuning model.

Basis ordering is ``|q1 q2>`` with index ``2*b1 + b2``; ``|0>`` is the spin
ground state and a "flip" is a measured ``|1>`` on the target qubit.

Larmor frequencies live in the IF frame (carrier removed), so the controller
detuning is simply ``f_larmor_q - f_if_q``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError

WAVEFORM_RESOLUTION = 4e-9


@dataclass(frozen=True)
class PlantState:
    """Ground-truth physical parameters.

    ``j_lever`` is in mV, matching the J-gate voltage ``v_j``.
    """

    f_larmor_1: float = 10.0e6
    f_larmor_2: float = 25.0e6
    f_rabi_1: float = 0.5e6
    f_rabi_2: float = 0.5e6
    j_ref: float = 1.0e6
    j_lever: float = 10.0
    phi_z1: float = 0.1
    phi_z2: float = 0.1
    eps_anticrossing: float = 0.0

    def __post_init__(self):
        for name in PLANT_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise ConfigError("must be finite", field=f"plant.{name}")
        for name in ("f_larmor_1", "f_larmor_2", "f_rabi_1", "f_rabi_2", "j_ref"):
            if getattr(self, name) <= 0:
                raise ConfigError("must be > 0", field=f"plant.{name}")
        if self.j_lever == 0:
            raise ConfigError("must be nonzero", field="plant.j_lever")

    def exchange(self, v_j: float) -> float:
        """Exchange coupling J(v) in Hz."""
        return self.j_ref * math.exp(v_j / self.j_lever)


PLANT_FIELDS = tuple(PlantState.__dataclass_fields__)


@dataclass(frozen=True)
class ControlState:
    """Controller settings mutated by feedback."""

    f_if_1: float
    f_if_2: float
    amp_1: float
    amp_2: float
    phase_1: float
    phase_2: float
    v_j: float
    t_cz: float
    eps_offset: float
    t_pi2_1: float
    t_pi2_2: float

    def __post_init__(self):
        for name in CONTROL_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise ConfigError("must be finite", field=f"control.{name}")
        for name in ("amp_1", "amp_2", "t_cz", "t_pi2_1", "t_pi2_2"):
            if getattr(self, name) <= 0:
                raise ConfigError("must be > 0", field=f"control.{name}")


CONTROL_FIELDS = tuple(ControlState.__dataclass_fields__)


def quantize_time(t: float, resolution: float = WAVEFORM_RESOLUTION) -> float:
    """Round a burst time to the waveform grid (at least one sample)."""
    return max(1, round(t / resolution)) * resolution


@dataclass(frozen=True)
class SensorModel:
    """Logistic charge-sensor response swept across the detuning window."""

    i_base: float = 1.0e-9
    delta_i: float = 0.5e-9
    width: float = 0.02
    sweep_lo: float = -1.0
    sweep_hi: float = 1.0

    def __post_init__(self):
        if not self.sweep_lo < self.sweep_hi:
            raise ConfigError("sweep_lo must be < sweep_hi", field="sensor.sweep_lo")
        if not self.width > 0:
            raise ConfigError("must be > 0", field="sensor.width")

    @property
    def span(self) -> float:
        return self.sweep_hi - self.sweep_lo

    @property
    def center(self) -> float:
        return 0.5 * (self.sweep_lo + self.sweep_hi)


def calibrated_control(plant: PlantState, sensor: SensorModel = SensorModel(),
                       t_cz: float = 200e-9,
                       resolution: float = WAVEFORM_RESOLUTION) -> ControlState:
    """Controller settings that exactly null every protocol for ``plant``.

    Burst times are quantized first; the mw amplitude then absorbs the
    quantization error.
    """
    t_pi2_1 = quantize_time(1.0 / (4.0 * plant.f_rabi_1), resolution)
    t_pi2_2 = quantize_time(1.0 / (4.0 * plant.f_rabi_2), resolution)
    t_cz = quantize_time(t_cz, resolution)
    return ControlState(
        f_if_1=plant.f_larmor_1,
        f_if_2=plant.f_larmor_2,
        amp_1=1.0 / (4.0 * plant.f_rabi_1 * t_pi2_1),
        amp_2=1.0 / (4.0 * plant.f_rabi_2 * t_pi2_2),
        phase_1=plant.phi_z1,
        phase_2=plant.phi_z2,
        v_j=ideal_v_j(plant, t_cz),
        t_cz=t_cz,
        eps_offset=plant.eps_anticrossing - sensor.center,
        t_pi2_1=t_pi2_1,
        t_pi2_2=t_pi2_2,
    )


def ideal_v_j(plant: PlantState, t_cz: float) -> float:
    """J-gate level giving a conditional phase of exactly pi in ``t_cz``."""
    return plant.j_lever * math.log(1.0 / (2.0 * plant.j_ref * t_cz))


# -- circuits ---------------------------------------------------------------


def _check_qubit(q):
    if q not in (1, 2):
        raise ValueError(f"qubit index must be 1 or 2, got {q!r}")


@dataclass(frozen=True)
class SqrtX:
    qubit: int

    def __post_init__(self):
        _check_qubit(self.qubit)


@dataclass(frozen=True)
class X:
    qubit: int

    def __post_init__(self):
        _check_qubit(self.qubit)


@dataclass(frozen=True)
class SqrtYPlus:
    qubit: int

    def __post_init__(self):
        _check_qubit(self.qubit)


@dataclass(frozen=True)
class SqrtYMinus:
    qubit: int

    def __post_init__(self):
        _check_qubit(self.qubit)


@dataclass(frozen=True)
class Wait:
    t: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t >= 0):
            raise ValueError("wait time must be finite and >= 0")


@dataclass(frozen=True)
class ExchangePulse:
    repeats: int = 1

    def __post_init__(self):
        if int(self.repeats) != self.repeats or self.repeats < 1:
            raise ValueError("exchange repeats must be an integer >= 1")


@dataclass(frozen=True)
class Measure:
    """Parity readout, reduced to the flip probability of ``target``."""

    target: int

    def __post_init__(self):
        _check_qubit(self.target)


GATES = (SqrtX, X, SqrtYPlus, SqrtYMinus, Wait, ExchangePulse)


@dataclass(frozen=True)
class Circuit:
    elements: tuple

    def __post_init__(self):
        els = tuple(self.elements)
        object.__setattr__(self, "elements", els)
        if not els or not isinstance(els[-1], Measure):
            raise ValueError("circuit must end with a Measure")
        for el in els[:-1]:
            if isinstance(el, Measure):
                raise ValueError("circuit must contain exactly one terminal Measure")
            if not isinstance(el, GATES):
                raise ValueError(f"unknown circuit element {el!r}")

    @property
    def target(self) -> int:
        return self.elements[-1].target

    def __len__(self):
        return len(self.elements)


@dataclass(frozen=True)
class CircuitPair:
    """The two circuits whose flip probabilities a protocol compares."""

    plus: Circuit
    minus: Circuit


class OutcomeProbs(NamedTuple):
    p_flip_plus: float
    p_flip_minus: float


# -- gate model -------------------------------------------------------------


def _rotation(theta: float, axis_phase: float):
    """Equatorial-axis rotation exp(-i theta/2 (cos phi X + sin phi Y)) as (a, b, c, d)."""
    c = math.cos(0.5 * theta)
    s = math.sin(0.5 * theta)
    return (c, -1j * s * cmath.exp(-1j * axis_phase), -1j * s * cmath.exp(1j * axis_phase), c)


def _rz(theta: float):
    return (cmath.exp(-0.5j * theta), 0.0, 0.0, cmath.exp(0.5j * theta))


def pulse_angle(q: int, plant: PlantState, ctrl: ControlState) -> float:
    """Rotation angle of one pi/2 burst on qubit ``q`` (pi/2 when calibrated)."""
    if q == 1:
        return 2.0 * math.pi * plant.f_rabi_1 * ctrl.amp_1 * ctrl.t_pi2_1
    return 2.0 * math.pi * plant.f_rabi_2 * ctrl.amp_2 * ctrl.t_pi2_2


def exchange_phases(plant: PlantState, ctrl: ControlState):
    """Per-pulse (conditional, residual Z1, residual Z2) phases in rad."""
    phi_zz = 2.0 * math.pi * plant.exchange(ctrl.v_j) * ctrl.t_cz
    return phi_zz, plant.phi_z1 - ctrl.phase_1, plant.phi_z2 - ctrl.phase_2


def _exchange_diag(plant, ctrl, repeats):
    # ZZ coupling written as a |11> conditional phase plus residual local Z
    # phases; eigenvalues of (ZZ - Z1 - Z2)/4 on |00>,|01>,|10>,|11>.
    phi_zz, r1, r2 = exchange_phases(plant, ctrl)
    phases = []
    for z1, z2 in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        arg = phi_zz * (z1 * z2 - z1 - z2) / 4.0 + r1 * z1 / 2.0 + r2 * z2 / 2.0
        phases.append(cmath.exp(-1j * repeats * arg))
    return phases


def _local_op(element, plant: PlantState, ctrl: ControlState):
    """``("1q", qubit, (a, b, c, d))``, ``("2q", None, (u1, u2))`` or ``("diag", None, phases)``."""
    if isinstance(element, SqrtX):
        return "1q", element.qubit, _rotation(pulse_angle(element.qubit, plant, ctrl), 0.0)
    if isinstance(element, X):
        return "1q", element.qubit, _rotation(2.0 * pulse_angle(element.qubit, plant, ctrl), 0.0)
    if isinstance(element, SqrtYPlus):
        return "1q", element.qubit, _rotation(pulse_angle(element.qubit, plant, ctrl), 0.5 * math.pi)
    if isinstance(element, SqrtYMinus):
        return "1q", element.qubit, _rotation(pulse_angle(element.qubit, plant, ctrl), -0.5 * math.pi)
    if isinstance(element, Wait):
        d1 = plant.f_larmor_1 - ctrl.f_if_1
        d2 = plant.f_larmor_2 - ctrl.f_if_2
        return "2q", None, (_rz(2 * math.pi * d1 * element.t), _rz(2 * math.pi * d2 * element.t))
    if isinstance(element, ExchangePulse):
        return "diag", None, _exchange_diag(plant, ctrl, element.repeats)
    raise TypeError(f"no unitary for element {element!r}")


def _as_matrix(u):
    a, b, c, d = u
    return np.array([[a, b], [c, d]], dtype=complex)


def gate_unitary(element, plant: PlantState, ctrl: ControlState) -> np.ndarray:
    """Full 4x4 unitary of one circuit element."""
    kind, q, op = _local_op(element, plant, ctrl)
    if kind == "diag":
        return np.diag(np.array(op, dtype=complex))
    eye = np.eye(2, dtype=complex)
    if kind == "2q":
        return np.kron(_as_matrix(op[0]), _as_matrix(op[1]))
    if q == 1:
        return np.kron(_as_matrix(op), eye)
    return np.kron(eye, _as_matrix(op))


# Scalar kernels: the feedback loop evaluates ~10^6 tiny circuits per
# session, where plain complex arithmetic is far cheaper than numpy calls.


def _apply_1q(psi, u, q):
    a, b, c, d = u
    p0, p1, p2, p3 = psi
    if q == 1:
        return [a * p0 + b * p2, a * p1 + b * p3, c * p0 + d * p2, c * p1 + d * p3]
    return [a * p0 + b * p1, c * p0 + d * p1, a * p2 + b * p3, c * p2 + d * p3]


def _apply(psi, element, plant, ctrl):
    kind, q, op = _local_op(element, plant, ctrl)
    if kind == "1q":
        return _apply_1q(psi, op, q)
    if kind == "2q":
        return _apply_1q(_apply_1q(psi, op[0], 1), op[1], 2)
    return [p * ph for p, ph in zip(psi, op)]


GROUND = (1.0 + 0j, 0j, 0j, 0j)


def evolve(elements, plant, ctrl, psi=GROUND):
    """State vector (list of 4 complex) after applying ``elements`` to ``psi``."""
    psi = list(psi)
    for el in elements:
        psi = _apply(psi, el, plant, ctrl)
    return psi


def _flip_prob(psi, target: int) -> float:
    if target == 1:
        p = abs(psi[2]) ** 2 + abs(psi[3]) ** 2
    else:
        p = abs(psi[1]) ** 2 + abs(psi[3]) ** 2
    return min(1.0, max(0.0, p))


def flip_probability(circuit: Circuit, plant: PlantState, ctrl: ControlState) -> float:
    """Exact flip probability of the measured qubit for one circuit."""
    return _flip_prob(evolve(circuit.elements[:-1], plant, ctrl), circuit.target)


def run_circuit(pair: CircuitPair, plant: PlantState, ctrl: ControlState) -> OutcomeProbs:
    """Flip probabilities of both circuits of a protocol.

    The shared gate prefix is evolved once.
    """
    plus, minus = pair.plus.elements[:-1], pair.minus.elements[:-1]
    n = 0
    for a, b in zip(plus, minus):
        if a != b:
            break
        n += 1
    psi = evolve(plus[:n], plant, ctrl)
    return OutcomeProbs(
        _flip_prob(evolve(plus[n:], plant, ctrl, psi), pair.plus.target),
        _flip_prob(evolve(minus[n:], plant, ctrl, psi), pair.minus.target),
    )


# -- readout ----------------------------------------------------------------


@dataclass(frozen=True)
class Spam:
    """Readout fidelities: ``f0`` = P(read 0 | 0), ``f1`` = P(read 1 | 1)."""

    f0: float = 1.0
    f1: float = 1.0

    def __post_init__(self):
        for name in ("f0", "f1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError("must be in [0, 1]", field=f"readout.{name}")

    def apply(self, p: float) -> float:
        return self.f1 * p + (1.0 - self.f0) * (1.0 - p)


def sample_shots(p: float, n_shots: int, rng: np.random.Generator,
                 spam: Optional[Spam] = None) -> int:
    """Number of flips observed in ``n_shots`` projective measurements."""
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability outside [0, 1]: {p!r}")
    if spam is not None:
        p = spam.apply(p)
    return int(rng.binomial(n_shots, p))


# -- charge sensor ----------------------------------------------------------


class SensorReading(NamedTuple):
    integral: float
    in_range: bool


def _softplus(x: float) -> float:
    return float(np.logaddexp(0.0, x))


def sensor_integral(plant: PlantState, ctrl: ControlState, model: SensorModel) -> SensorReading:
    """Charge-sensor current integrated over the detuning sweep (A*mV).

    The transition sits at ``eps_anticrossing - eps_offset`` in swept
    coordinates; the logistic integral is evaluated in closed form.
    """
    center = plant.eps_anticrossing - ctrl.eps_offset
    w = model.width
    step = w * (_softplus((model.sweep_hi - center) / w) - _softplus((model.sweep_lo - center) / w))
    value = model.i_base * model.span + model.delta_i * step
    return SensorReading(value, model.sweep_lo <= center <= model.sweep_hi)


def sensor_target(model: SensorModel) -> float:
    """Integral with the transition exactly mid-window (the feedback setpoint)."""
    return model.i_base * model.span + model.delta_i * model.span / 2.0
