"""Seeded stochastic processes that perturb plant parameters.

Every process advances on a fixed clock (one step per feedback cycle).  A
process can be stepped one cycle at a time or asked for a whole trace at
once; both routes consume the random stream in the same order and produce
bit-identical offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, NoiseClockError

_CHUNK = 1 << 15


@dataclass(frozen=True)
class FluctuatorSpec:
    """Two-level fluctuator (random telegraph process).

    ``rate_up`` is the low -> high transition rate and ``rate_down`` the
    reverse, both in 1/s.  With the default ``symmetric`` convention the
    offset is ``+amplitude/2`` when high and ``-amplitude/2`` when low; the
    ``unipolar`` convention gives ``amplitude`` and ``0``.
    """

    amplitude: float
    rate_up: float
    rate_down: float
    initial_state: str = "low"
    convention: str = "symmetric"

    def __post_init__(self):
        if not math.isfinite(self.amplitude):
            raise ConfigError("fluctuator amplitude must be finite", field="amplitude")
        for name in ("rate_up", "rate_down"):
            rate = getattr(self, name)
            if not (math.isfinite(rate) and rate > 0):
                raise ConfigError(f"fluctuator {name} must be finite and > 0, got {rate!r}", field=name)
        if self.initial_state not in ("low", "high", "random"):
            raise ConfigError(f"unknown initial_state {self.initial_state!r}", field="initial_state")
        if self.convention not in ("symmetric", "unipolar"):
            raise ConfigError(f"unknown fluctuator convention {self.convention!r}", field="convention")

    @property
    def p_high(self) -> float:
        """Stationary probability of the high state."""
        return self.rate_up / (self.rate_up + self.rate_down)

    def level(self, high: bool) -> float:
        if self.convention == "unipolar":
            return self.amplitude if high else 0.0
        return 0.5 * self.amplitude if high else -0.5 * self.amplitude


@dataclass(frozen=True)
class EnsembleSpec:
    """Ensemble of symmetric fluctuators with log-uniform switching rates."""

    count: int
    rate_min: float
    rate_max: float
    amplitude_per_fluctuator: float
    seed: int = 0

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise ConfigError(f"ensemble count must be an integer >= 1, got {self.count!r}", field="count")
        if not (0 < self.rate_min < self.rate_max and math.isfinite(self.rate_max)):
            raise ConfigError("ensemble rates need 0 < rate_min < rate_max", field="rate_min")
        if not math.isfinite(self.amplitude_per_fluctuator):
            raise ConfigError("ensemble amplitude must be finite", field="amplitude_per_fluctuator")


@dataclass(frozen=True)
class DriftSpec:
    kind: str
    slope: float = 0.0
    step_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "random_walk"):
            raise ConfigError(f"drift kind must be 'linear' or 'random_walk', got {self.kind!r}")
        if not (math.isfinite(self.slope) and math.isfinite(self.step_sigma)):
            raise ConfigError("drift parameters must be finite")
        if self.step_sigma < 0:
            raise ConfigError("drift step_sigma must be >= 0", field="step_sigma")
        if self.kind == "linear" and self.step_sigma != 0:
            raise ConfigError("linear drift takes 'slope' only")
        if self.kind == "random_walk" and self.slope != 0:
            raise ConfigError("random_walk drift takes 'step_sigma' only")


@dataclass(frozen=True)
class WhiteSpec:
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError("white noise sigma must be finite and >= 0", field="sigma")


ProcessSpec = Union[FluctuatorSpec, EnsembleSpec, DriftSpec, WhiteSpec]


@dataclass(frozen=True)
class NoiseProcessSpec:
    """One stochastic process attached to one plant parameter.

    Several specs may share a target; their offsets add.
    """

    target: str
    process: ProcessSpec


# -- single-step operations -------------------------------------------------


def transition_probability(rate: float, dt: float) -> float:
    """Exact probability of at least one transition within ``dt``."""
    return -math.expm1(-rate * dt)


def step_fluctuator(high: bool, spec: FluctuatorSpec, dt: float, rng: np.random.Generator):
    """Advance one fluctuator by ``dt``; returns ``(high, offset)``."""
    _check_dt(dt)
    rate = spec.rate_down if high else spec.rate_up
    if rng.random() < transition_probability(rate, dt):
        high = not high
    return high, spec.level(high)


def ensemble_rates(spec: EnsembleSpec) -> np.ndarray:
    """Member switching rates, drawn once from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = math.log(spec.rate_min), math.log(spec.rate_max)
    return np.exp(rng.uniform(lo, hi, size=spec.count))


def step_ensemble(states: np.ndarray, rates: np.ndarray, spec: EnsembleSpec, dt: float,
                  rng: np.random.Generator):
    """Advance every member once; returns ``(states, summed offset)``.

    Members are symmetric (equal up/down rate), so the flip probability does
    not depend on the current state.
    """
    _check_dt(dt)
    flips = rng.random(spec.count) < -np.expm1(-rates * dt)
    states = states ^ flips
    return states, _ensemble_level(states, spec)


def _ensemble_level(states: np.ndarray, spec: EnsembleSpec) -> float:
    n_high = int(np.count_nonzero(states))
    return spec.amplitude_per_fluctuator * (n_high - 0.5 * spec.count)


@dataclass
class DriftState:
    steps: int = 0
    offset: float = 0.0


def step_drift(state: DriftState, spec: DriftSpec, dt: float, rng: np.random.Generator):
    """Advance a drift by ``dt``; returns ``(state, offset)``.

    Linear drift is evaluated from the step count so that ``t`` is exact
    rather than accumulated.
    """
    _check_dt(dt)
    steps = state.steps + 1
    if spec.kind == "linear":
        offset = spec.slope * (steps * dt)
    else:
        offset = state.offset + spec.step_sigma * math.sqrt(dt) * rng.standard_normal()
    return DriftState(steps, offset), offset


def _check_dt(dt):
    if not (math.isfinite(dt) and dt > 0):
        raise ConfigError(f"time step must be finite and > 0, got {dt!r}")


# -- stateful processes -----------------------------------------------------


class NoiseProcess:
    """Stateful wrapper around one :class:`NoiseProcessSpec`.

    ``step()`` advances one clock tick and returns the current offset;
    ``trace(n)`` returns the next ``n`` offsets and is equivalent to calling
    ``step()`` ``n`` times.
    """

    def __init__(self, spec: NoiseProcessSpec, dt: float, rng: np.random.Generator):
        _check_dt(dt)
        self.spec = spec
        self.target = spec.target
        self.dt = dt
        self.rng = rng
        self.steps = 0
        proc = spec.process
        if isinstance(proc, FluctuatorSpec):
            if proc.initial_state == "random":
                self._high = bool(rng.random() < proc.p_high)
            else:
                self._high = proc.initial_state == "high"
            self.offset = proc.level(self._high)
        elif isinstance(proc, EnsembleSpec):
            self._rates = ensemble_rates(proc)
            self._p = -np.expm1(-self._rates * dt)
            # members start in their stationary (uniform) distribution
            self._states = rng.random(proc.count) < 0.5
            self.offset = _ensemble_level(self._states, proc)
        elif isinstance(proc, DriftSpec):
            self._drift = DriftState()
            self.offset = 0.0
        elif isinstance(proc, WhiteSpec):
            self.offset = 0.0
        else:
            raise ConfigError(f"unsupported noise process {type(proc).__name__}")

    @property
    def time(self) -> float:
        return self.steps * self.dt

    def step(self) -> float:
        proc = self.spec.process
        if isinstance(proc, FluctuatorSpec):
            self._high, self.offset = step_fluctuator(self._high, proc, self.dt, self.rng)
        elif isinstance(proc, EnsembleSpec):
            flips = self.rng.random(proc.count) < self._p
            self._states = self._states ^ flips
            self.offset = _ensemble_level(self._states, proc)
        elif isinstance(proc, DriftSpec):
            self._drift, self.offset = step_drift(self._drift, proc, self.dt, self.rng)
        else:
            self.offset = proc.sigma * self.rng.standard_normal()
        self.steps += 1
        return self.offset

    def trace(self, n: int) -> np.ndarray:
        proc = self.spec.process
        out = np.empty(n)
        if n == 0:
            return out
        if isinstance(proc, FluctuatorSpec):
            p_up = transition_probability(proc.rate_up, self.dt)
            p_down = transition_probability(proc.rate_down, self.dt)
            hi, lo = proc.level(True), proc.level(False)
            high = self._high
            for i, u in enumerate(self.rng.random(n).tolist()):
                if u < (p_down if high else p_up):
                    high = not high
                out[i] = hi if high else lo
            self._high = high
            self.offset = out[-1]
        elif isinstance(proc, EnsembleSpec):
            states = self._states
            for start in range(0, n, _CHUNK):
                m = min(_CHUNK, n - start)
                flips = self.rng.random((m, proc.count)) < self._p
                parity = np.cumsum(flips, axis=0, dtype=np.int64) & 1
                block = states ^ parity.astype(bool)
                n_high = np.count_nonzero(block, axis=1)
                out[start:start + m] = proc.amplitude_per_fluctuator * (n_high - 0.5 * proc.count)
                states = block[-1].copy()
            self._states = states
            self.offset = out[-1]
        elif isinstance(proc, DriftSpec):
            k = self._drift.steps + np.arange(1, n + 1)
            if proc.kind == "linear":
                out[:] = proc.slope * (k * self.dt)
            else:
                inc = proc.step_sigma * math.sqrt(self.dt) * self.rng.standard_normal(n)
                inc[0] += self._drift.offset
                np.cumsum(inc, out=out)
            self._drift = DriftState(int(k[-1]), float(out[-1]))
            self.offset = out[-1]
        else:
            out[:] = proc.sigma * self.rng.standard_normal(n)
            self.offset = out[-1]
        self.steps += n
        return out


def total_offset(processes) -> float:
    """Sum of the current offsets of processes that share one target."""
    processes = list(processes)
    if not processes:
        return 0.0
    clocks = {p.steps for p in processes}
    if len(clocks) != 1:
        raise NoiseClockError(f"processes stepped to different clocks: {sorted(clocks)}")
    return float(sum(p.offset for p in processes))


def process_rng(seed: int, index: int) -> np.random.Generator:
    """Independent substream for the ``index``-th noise process of a session."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, index)))


def build_processes(specs, dt: float, seed: int, targets=None) -> list[NoiseProcess]:
    """Instantiate every spec with its own seed-derived substream."""
    procs = []
    for i, spec in enumerate(specs):
        if targets is not None and spec.target not in targets:
            raise ConfigError(f"noise target {spec.target!r} is not a plant parameter")
        procs.append(NoiseProcess(spec, dt, process_rng(seed, i)))
    return procs


def offset_traces(specs, dt: float, n: int, seed: int, targets=None) -> dict[str, np.ndarray]:
    """Per-target summed offsets for ``n`` clock ticks (ticks 1..n)."""
    out: dict[str, np.ndarray] = {}
    for proc in build_processes(specs, dt, seed, targets):
        trace = proc.trace(n)
        if proc.target in out:
            out[proc.target] = out[proc.target] + trace
        else:
            out[proc.target] = trace
    return out
