"""Shot-limited feedback protocols and the closed-loop session runner."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from . import noise as noise_mod
from .errors import ConfigError, SessionAbort
from .plant import (
    PLANT_FIELDS,
    WAVEFORM_RESOLUTION,
    Circuit,
    CircuitPair,
    ControlState,
    ExchangePulse,
    Measure,
    PlantState,
    SensorModel,
    Spam,
    SqrtX,
    SqrtYMinus,
    SqrtYPlus,
    Wait,
    X,
    calibrated_control,
    ideal_v_j,
    quantize_time,
    run_circuit,
    sample_shots,
    sensor_integral,
    sensor_target,
)


class ProtocolKind(str, enum.Enum):
    DETUNING = "Detuning"
    LARMOR_Q1 = "LarmorQ1"
    LARMOR_Q2 = "LarmorQ2"
    RABI_Q1 = "RabiQ1"
    RABI_Q2 = "RabiQ2"
    EXCHANGE = "ExchangeLevel"
    PHASE_Q1 = "PhaseQ1"
    PHASE_Q2 = "PhaseQ2"

    @property
    def qubit(self) -> Optional[int]:
        if self.value.endswith("Q1") or self is ProtocolKind.EXCHANGE:
            return 1
        if self.value.endswith("Q2"):
            return 2
        return None


KINDS = tuple(ProtocolKind)

CONTROL_FIELD = {
    ProtocolKind.DETUNING: "eps_offset",
    ProtocolKind.LARMOR_Q1: "f_if_1",
    ProtocolKind.LARMOR_Q2: "f_if_2",
    ProtocolKind.RABI_Q1: "amp_1",
    ProtocolKind.RABI_Q2: "amp_2",
    ProtocolKind.EXCHANGE: "v_j",
    ProtocolKind.PHASE_Q1: "phase_1",
    ProtocolKind.PHASE_Q2: "phase_2",
}

BURST_FIELD = {ProtocolKind.RABI_Q1: "t_pi2_1", ProtocolKind.RABI_Q2: "t_pi2_2"}
TIME_FIELDS = ("t_pi2_1", "t_pi2_2", "t_cz")

# amplitudes are multiplicative, everything else additive
NORMALIZATION = {
    "amp_1": "divide", "amp_2": "divide",
    "t_pi2_1": "divide", "t_pi2_2": "divide",
}


def parse_kind(name) -> ProtocolKind:
    try:
        return ProtocolKind(name)
    except ValueError:
        raise ConfigError(f"unknown protocol {name!r}; expected one of "
                          f"{[k.value for k in KINDS]}") from None


@dataclass(frozen=True)
class ProtocolConfig:
    """Settings for one protocol.

    ``scale`` and ``clamp`` left as ``None`` are filled from the plant and
    protocol geometry by :func:`resolve_protocol`.  ``n_shots=None`` selects
    the infinite-shot (exact probability) estimator.  ``rabi_target`` lets
    the Rabi protocols correct the burst time instead of the amplitude.
    """

    kind: ProtocolKind
    gain: float = 0.5
    n_shots: Optional[int] = 20
    scale: Optional[float] = None
    t_wait: float = 100e-9
    n_rabi: int = 3
    n_cz: Optional[int] = None
    clamp: Optional[float] = None
    rabi_target: str = "amp"

    def __post_init__(self):
        object.__setattr__(self, "kind", parse_kind(self.kind))
        name = self.kind.value
        if not (0.0 < self.gain < 2.0):
            raise ConfigError(f"gain must be in (0, 2), got {self.gain!r}",
                              field=f"protocols.{name}.gain")
        if self.n_shots is not None and (int(self.n_shots) != self.n_shots or self.n_shots < 1):
            raise ConfigError("n_shots must be an integer >= 1 or null",
                              field=f"protocols.{name}.n_shots")
        if int(self.n_rabi) != self.n_rabi or self.n_rabi < 1 or self.n_rabi % 2 == 0:
            raise ConfigError("n_rabi must be a positive odd integer",
                              field=f"protocols.{name}.n_rabi")
        if self.n_cz is not None and (int(self.n_cz) != self.n_cz or self.n_cz < 1):
            raise ConfigError("n_cz must be an integer >= 1", field=f"protocols.{name}.n_cz")
        if not (math.isfinite(self.t_wait) and self.t_wait > 0):
            raise ConfigError("t_wait must be > 0", field=f"protocols.{name}.t_wait")
        if self.clamp is not None and not self.clamp > 0:
            raise ConfigError("clamp must be > 0", field=f"protocols.{name}.clamp")
        if self.scale is not None and not (math.isfinite(self.scale) and self.scale != 0):
            raise ConfigError("scale must be finite and nonzero", field=f"protocols.{name}.scale")
        if self.rabi_target not in ("amp", "t_pi2"):
            raise ConfigError("rabi_target must be 'amp' or 't_pi2'",
                              field=f"protocols.{name}.rabi_target")

    @property
    def cz_repeats(self) -> int:
        if self.n_cz is not None:
            return int(self.n_cz)
        return 7 if self.kind is ProtocolKind.EXCHANGE else 1

    @property
    def control_field(self) -> str:
        if self.kind in BURST_FIELD and self.rabi_target == "t_pi2":
            return BURST_FIELD[self.kind]
        return CONTROL_FIELD[self.kind]


@dataclass(frozen=True)
class SensorSweep:
    """Detuning "circuit": a sensor sweep across the charge transition."""

    model: SensorModel


def build_circuit(cfg: ProtocolConfig, sensor: SensorModel = SensorModel()):
    """Measurement circuits of one protocol (a :class:`SensorSweep` for Detuning)."""
    kind = cfg.kind
    q = kind.qubit
    if kind is ProtocolKind.DETUNING:
        return SensorSweep(sensor)
    if kind in (ProtocolKind.LARMOR_Q1, ProtocolKind.LARMOR_Q2):
        head = (SqrtX(q), Wait(cfg.t_wait))
    elif kind in (ProtocolKind.RABI_Q1, ProtocolKind.RABI_Q2):
        n = int(cfg.n_rabi)
        return CircuitPair(Circuit((SqrtX(q),) * n + (Measure(q),)),
                           Circuit((SqrtX(q),) * (n + 2) + (Measure(q),)))
    elif kind is ProtocolKind.EXCHANGE:
        head = (SqrtX(1), X(2), ExchangePulse(cfg.cz_repeats))
    else:
        head = (SqrtX(q), ExchangePulse(cfg.cz_repeats))
    return CircuitPair(Circuit(head + (SqrtYPlus(q), Measure(q))),
                       Circuit(head + (SqrtYMinus(q), Measure(q))))


def sensitivity(cfg: ProtocolConfig, plant: PlantState, ctrl: ControlState) -> float:
    """Linearized d(estimator)/d(control value) at the calibrated point."""
    kind = cfg.kind
    if kind is ProtocolKind.DETUNING:
        return -1.0
    if kind in (ProtocolKind.LARMOR_Q1, ProtocolKind.LARMOR_Q2):
        return -2.0 * math.pi * cfg.t_wait
    if kind in (ProtocolKind.RABI_Q1, ProtocolKind.RABI_Q2):
        n = int(cfg.n_rabi)
        # p_n - p_{n+2} ~ sin(n pi/2) * pi (n+1)/2 * (fractional rotation error)
        slope = math.sin(0.5 * math.pi * n) * math.pi * (n + 1) / 2.0
        q = kind.qubit
        amp = getattr(ctrl, f"amp_{q}")
        t_pi2 = getattr(ctrl, f"t_pi2_{q}")
        if cfg.rabi_target == "t_pi2":
            return slope / t_pi2
        return slope / amp
    n = cfg.cz_repeats
    if kind is ProtocolKind.EXCHANGE:
        return (-1) ** (n + 1) * n * math.pi / plant.j_lever
    return -float(n)


def resolve_protocol(cfg: ProtocolConfig, plant: PlantState, ctrl: ControlState,
                     sensor: SensorModel = SensorModel()) -> ProtocolConfig:
    """Fill default ``scale`` (inverse sensitivity) and ``clamp``.

    The default clamp is ten times the single-cycle shot-noise floor of the
    correction, or half the sweep window for Detuning.
    """
    scale = cfg.scale if cfg.scale is not None else 1.0 / sensitivity(cfg, plant, ctrl)
    clamp = cfg.clamp
    if clamp is None:
        if cfg.kind is ProtocolKind.DETUNING:
            clamp = 0.5 * sensor.span
        else:
            shots = cfg.n_shots if cfg.n_shots is not None else 20
            clamp = 10.0 * abs(scale) * math.sqrt(0.5 / shots)
    return replace(cfg, scale=scale, clamp=clamp)


class Estimate(NamedTuple):
    d: float
    in_range: bool = True


def estimate_deviation(cfg: ProtocolConfig, plant: PlantState, ctrl: ControlState,
                       rng: Optional[np.random.Generator] = None,
                       sensor: SensorModel = SensorModel(),
                       spam: Optional[Spam] = None, circuits=None) -> Estimate:
    """Measured deviation: a probability difference, or mV for Detuning."""
    if cfg.kind is ProtocolKind.DETUNING:
        reading = sensor_integral(plant, ctrl, sensor)
        d = (sensor_target(sensor) - reading.integral) / sensor.delta_i
        if not reading.in_range:
            d = min(max(d, sensor.sweep_lo - sensor.center), sensor.sweep_hi - sensor.center)
        return Estimate(d, reading.in_range)
    pair = circuits if circuits is not None else build_circuit(cfg, sensor)
    probs = run_circuit(pair, plant, ctrl)
    if cfg.n_shots is None:
        if spam is not None:
            return Estimate(spam.apply(probs.p_flip_plus) - spam.apply(probs.p_flip_minus))
        return Estimate(probs.p_flip_plus - probs.p_flip_minus)
    n = int(cfg.n_shots)
    plus = sample_shots(probs.p_flip_plus, n, rng, spam)
    minus = sample_shots(probs.p_flip_minus, n, rng, spam)
    return Estimate((plus - minus) / n)


def correction_for(cfg: ProtocolConfig, d: float) -> float:
    """Proportional correction ``-gain * scale * d``, clamped to ``+-clamp``."""
    c = -cfg.gain * cfg.scale * d
    if cfg.clamp is not None:
        c = min(max(c, -cfg.clamp), cfg.clamp)
    return c


def apply_correction(ctrl: ControlState, cfg: ProtocolConfig, d: float,
                     resolution: float = WAVEFORM_RESOLUTION, cycle: int = -1) -> ControlState:
    """Return ``ctrl`` with the protocol's control field corrected."""
    if d == 0:
        return ctrl
    name = cfg.control_field
    new = getattr(ctrl, name) + correction_for(cfg, d)
    if name in TIME_FIELDS:
        new = quantize_time(new, resolution)
    if not math.isfinite(new):
        raise SessionAbort(f"{cfg.kind.value} produced non-finite {name}", cycle)
    if name in ("amp_1", "amp_2") and new <= 0:
        raise SessionAbort(f"{cfg.kind.value} drove {name} to {new!r}", cycle)
    return replace(ctrl, **{name: new})


def tracking_error(kind: ProtocolKind, plant: PlantState, ctrl: ControlState,
                   sensor: SensorModel = SensorModel()) -> float:
    """Control value minus the value that would null the protocol exactly."""
    if kind is ProtocolKind.DETUNING:
        return ctrl.eps_offset - (plant.eps_anticrossing - sensor.center)
    if kind is ProtocolKind.LARMOR_Q1:
        return ctrl.f_if_1 - plant.f_larmor_1
    if kind is ProtocolKind.LARMOR_Q2:
        return ctrl.f_if_2 - plant.f_larmor_2
    if kind is ProtocolKind.RABI_Q1:
        return 4.0 * plant.f_rabi_1 * ctrl.amp_1 * ctrl.t_pi2_1 - 1.0
    if kind is ProtocolKind.RABI_Q2:
        return 4.0 * plant.f_rabi_2 * ctrl.amp_2 * ctrl.t_pi2_2 - 1.0
    if kind is ProtocolKind.EXCHANGE:
        return ctrl.v_j - ideal_v_j(plant, ctrl.t_cz)
    if kind is ProtocolKind.PHASE_Q1:
        return ctrl.phase_1 - plant.phi_z1
    return ctrl.phase_2 - plant.phi_z2


# -- session ----------------------------------------------------------------


def _default_protocols():
    gains = {
        ProtocolKind.DETUNING: 1.0,
        ProtocolKind.LARMOR_Q1: 0.1,
        ProtocolKind.LARMOR_Q2: 0.1,
        ProtocolKind.RABI_Q1: 0.1,
        ProtocolKind.RABI_Q2: 0.1,
        ProtocolKind.EXCHANGE: 0.1,
        ProtocolKind.PHASE_Q1: 0.1,
        ProtocolKind.PHASE_Q2: 0.1,
    }
    return tuple(ProtocolConfig(k, gain=g, n_shots=None if k is ProtocolKind.DETUNING else 20)
                 for k, g in gains.items())


@dataclass(frozen=True)
class SessionConfig:
    """Everything a closed-loop run needs.

    ``control=None`` starts from :func:`calibrated_control` for the plant at
    the first tick (``plant`` plus its initial noise offsets);
    ``control_offsets`` adds deliberate initial miscalibrations on top.
    ``schedule`` is ``"per_tick"`` (every protocol every tick) or
    ``"round_robin"`` (one protocol per tick, cycling in order).
    """

    duration: float = 542 * 60.0
    cycle_period: float = 0.6
    protocols: tuple = field(default_factory=_default_protocols)
    noise: tuple = ()
    plant: PlantState = PlantState()
    control: Optional[ControlState] = None
    control_offsets: tuple = ()
    sensor: SensorModel = SensorModel()
    spam: Optional[Spam] = None
    t_cz: float = 200e-9
    waveform_resolution: float = WAVEFORM_RESOLUTION
    seed: int = 0
    schedule: str = "per_tick"
    open_loop: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.cycle_period) and self.cycle_period > 0):
            raise ConfigError("must be > 0", field="session.cycle_period_s")
        if not (math.isfinite(self.duration) and self.duration >= self.cycle_period):
            raise ConfigError("duration must be >= cycle_period", field="session.duration_s")
        kinds = [p.kind for p in self.protocols]
        if len(set(kinds)) != len(kinds):
            raise ConfigError("protocol order lists a protocol twice", field="session.protocols")
        if not kinds:
            raise ConfigError("no protocols enabled", field="session.protocols")
        if self.schedule not in ("per_tick", "round_robin"):
            raise ConfigError("schedule must be 'per_tick' or 'round_robin'",
                              field="session.schedule")
        for spec in self.noise:
            if spec.target not in PLANT_FIELDS:
                raise ConfigError(f"noise target {spec.target!r} is not a plant parameter",
                                  field="noise.target")
        for name, _ in self.control_offsets:
            if name not in ControlState.__dataclass_fields__:
                raise ConfigError(f"unknown control field {name!r}", field="control_offsets")

    @property
    def n_cycles(self) -> int:
        return int(math.floor(self.duration / self.cycle_period + 1e-9))

    def initial_control(self, plant: Optional[PlantState] = None,
                        offsets: bool = True) -> ControlState:
        """Starting settings; ``plant`` is what an automatic calibration sees."""
        ctrl = self.control
        if ctrl is None:
            ctrl = calibrated_control(plant or self.plant, self.sensor, self.t_cz,
                                      self.waveform_resolution)
        if offsets and self.control_offsets:
            ctrl = replace(ctrl, **{k: getattr(ctrl, k) + v for k, v in self.control_offsets})
        return ctrl


@dataclass
class ProtocolSeries:
    """Logged history of one protocol."""

    kind: ProtocolKind
    control_field: str
    normalization: str
    time_s: np.ndarray
    value_raw: np.ndarray
    value_normalized: np.ndarray
    estimator: np.ndarray
    correction: np.ndarray
    tracking_error: Optional[np.ndarray] = None
    in_range: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.time_s)


def normalize(values: np.ndarray, how: str) -> np.ndarray:
    """Express a series relative to its first element."""
    values = np.asarray(values, dtype=float)
    if how == "divide":
        return values / values[0]
    return values - values[0]


@dataclass
class CorrectionLog:
    series: dict
    metadata: dict

    def __getitem__(self, kind) -> ProtocolSeries:
        return self.series[parse_kind(kind)]

    @property
    def kinds(self):
        return list(self.series)


def shot_rng(seed: int, kind: ProtocolKind) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, KINDS.index(kind))))


def _schedule(session: SessionConfig):
    """Per protocol, the tick indices at which it runs."""
    n = session.n_cycles
    k = len(session.protocols)
    if session.schedule == "per_tick":
        return [np.arange(n)] * k
    return [np.arange(i, n, k) for i in range(k)]


def run_session(session: SessionConfig, metadata: Optional[dict] = None) -> CorrectionLog:
    """Run the closed loop and return the full correction log.

    Each tick advances every noise process once, then runs the scheduled
    protocols in order (estimate, correct, log).  Noise is open-loop with
    respect to the controller, so offsets are generated up front.
    """
    n = session.n_cycles
    dt = session.cycle_period
    base = session.plant
    offsets = noise_mod.offset_traces(session.noise, dt, n, session.seed, PLANT_FIELDS)
    noisy = [(name, getattr(base, name), offsets[name]) for name in PLANT_FIELDS if name in offsets]
    plant_at = _plant_factory(base, noisy)

    # the pre-session calibration sees the plant as it stands at the first tick
    first = plant_at(0)
    ctrl = session.initial_control(first)
    start = ctrl
    # sensitivities are linearized about the calibrated point, before offsets
    nominal = session.initial_control(first, offsets=False)
    protos = [resolve_protocol(p, first, nominal, session.sensor) for p in session.protocols]
    circuits = [build_circuit(p, session.sensor) for p in protos]
    rngs = [shot_rng(session.seed, p.kind) for p in protos]
    ticks = _schedule(session)
    n_rows = [len(t) for t in ticks]
    row = [0] * len(protos)
    logs = [{key: np.empty(m) for key in ("value", "d", "corr", "err")} for m in n_rows]
    in_range = [np.ones(m, dtype=bool) for m in n_rows]
    round_robin = session.schedule == "round_robin"
    n_protos = len(protos)
    sensor, spam, res = session.sensor, session.spam, session.waveform_resolution

    for tick in range(n):
        plant = plant_at(tick)
        if round_robin:
            order = ((tick % n_protos),)
        else:
            order = range(n_protos)
        for i in order:
            cfg = protos[i]
            est = estimate_deviation(cfg, plant, ctrl, rngs[i], sensor, spam, circuits[i])
            before = getattr(ctrl, cfg.control_field)
            if not session.open_loop:
                ctrl = apply_correction(ctrl, cfg, est.d, res, tick)
            j = row[i]
            log = logs[i]
            value = getattr(ctrl, cfg.control_field)
            log["value"][j] = value
            log["d"][j] = est.d
            log["corr"][j] = value - before
            log["err"][j] = tracking_error(cfg.kind, plant, ctrl, sensor)
            in_range[i][j] = est.in_range
            row[i] = j + 1

    series = {}
    for i, cfg in enumerate(protos):
        how = NORMALIZATION.get(cfg.control_field, "subtract")
        value = logs[i]["value"]
        series[cfg.kind] = ProtocolSeries(
            kind=cfg.kind,
            control_field=cfg.control_field,
            normalization=how,
            time_s=(ticks[i] + 1) * dt,
            value_raw=value,
            value_normalized=normalize(value, how),
            estimator=logs[i]["d"],
            correction=logs[i]["corr"],
            tracking_error=logs[i]["err"],
            in_range=in_range[i],
        )
    meta = {
        "format_version": "1",
        "seed": session.seed,
        "duration_s": session.duration,
        "cycle_period_s": dt,
        "n_cycles": n,
        "schedule": session.schedule,
        "open_loop": session.open_loop,
        "initial_control": asdict(start),
        "protocols": {
            cfg.kind.value: {
                "control_field": cfg.control_field,
                "normalization": series[cfg.kind].normalization,
                "scale": cfg.scale,
                "clamp": cfg.clamp,
                "rows": len(series[cfg.kind]),
                "out_of_range": int(np.count_nonzero(~series[cfg.kind].in_range)),
            }
            for cfg in protos
        },
    }
    if metadata:
        meta.update(metadata)
    return CorrectionLog(series, meta)


def _plant_factory(base: PlantState, noisy):
    if not noisy:
        return lambda tick: base
    names = [name for name, _, _ in noisy]
    columns = [(value + trace).tolist() for _, value, trace in noisy]

    def plant_at(tick):
        return replace(base, **{name: col[tick] for name, col in zip(names, columns)})

    return plant_at
