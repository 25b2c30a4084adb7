"""Session configuration documents.

A config is a YAML (or JSON) mapping with the sections ``session``,
``plant``, ``control``, ``protocols``, ``noise``, ``sensor``, ``readout``,
``analysis`` and ``export``.  Every section is optional; missing keys take
the defaults below, unknown keys are rejected.  :func:`materialize` returns
the fully populated document that is echoed into run metadata, and loading
that echo reproduces the run exactly.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError
from .feedback import KINDS, ProtocolConfig, SessionConfig, parse_kind
from .noise import DriftSpec, EnsembleSpec, FluctuatorSpec, NoiseProcessSpec, WhiteSpec
from .plant import PLANT_FIELDS, ControlState, PlantState, SensorModel, Spam, calibrated_control

FORMAT_VERSION = "1"

class _Loader(yaml.SafeLoader):
    """Safe loader that reads exponent floats such as ``2e5`` (YAML 1.2 style)
    and rejects duplicate keys instead of letting the last one win."""

    def construct_mapping(self, node, deep=False):
        seen = set()
        for key_node, _ in node.value:
            key = self.construct_object(key_node, deep=deep)
            if not isinstance(key, (str, int, float)):
                continue
            if key in seen:
                raise ConfigError(f"duplicate key {key!r}", line=key_node.start_mark.line + 1)
            seen.add(key)
        return super().construct_mapping(node, deep)


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)

_PROTOCOL_KEYS = ("gain", "n_shots", "scale", "t_wait", "n_rabi", "n_cz", "clamp", "rabi_target")

DEFAULTS = {
    "session": {
        "duration_s": 542 * 60.0,
        "cycle_period_s": 0.6,
        "seed": 0,
        "protocols": [k.value for k in KINDS],
        "schedule": "per_tick",
        "open_loop": False,
    },
    "plant": {name: getattr(PlantState(), name) for name in PLANT_FIELDS},
    "control": {
        "initial": {},
        "offsets": {},
        "t_cz_s": 200e-9,
        "waveform_resolution_s": 4e-9,
    },
    "protocols": {},
    "noise": [],
    "sensor": asdict(SensorModel()),
    "readout": {"f0": 1.0, "f1": 1.0},
    "analysis": {
        "n_lambda": 64,
        "lambda_min_s": None,
        "lambda_max_s": None,
        "tau_stride": 1,
        "include_coi": False,
        "welch_segments": 8,
        "welch_overlap": 0.5,
        "coi_fraction": 0.1,
    },
    "export": {
        "formats": ["csv", "svg"],
        "wavelet_csv_stride": 25,
        "heatmap_columns": 240,
    },
}

_PROTOCOL_DEFAULTS = {"gain": 0.1, "n_shots": 20, "scale": None, "t_wait": 100e-9,
                      "n_rabi": 3, "n_cz": None, "clamp": None, "rabi_target": "amp"}

_NOISE_KEYS = {
    "fluctuator": ("amplitude", "rate_up", "rate_down", "initial_state", "convention"),
    "ensemble": ("count", "rate_min", "rate_max", "amplitude_per_fluctuator", "seed"),
    "linear": ("slope",),
    "random_walk": ("step_sigma",),
    "white": ("sigma",),
}


def protocol_defaults(kind) -> dict:
    out = dict(_PROTOCOL_DEFAULTS)
    if parse_kind(kind).value == "Detuning":
        out.update(gain=1.0, n_shots=None)
    return out


@dataclass
class AnalysisOptions:
    n_lambda: int = 64
    lambda_min_s: Optional[float] = None
    lambda_max_s: Optional[float] = None
    tau_stride: int = 1
    include_coi: bool = False
    welch_segments: int = 8
    welch_overlap: float = 0.5
    coi_fraction: float = 0.1


@dataclass
class ExportOptions:
    formats: tuple = ("csv", "svg")
    wavelet_csv_stride: int = 25
    heatmap_columns: int = 240


@dataclass
class LoadedConfig:
    document: dict
    session: SessionConfig
    analysis: AnalysisOptions
    export: ExportOptions

    @property
    def digest(self) -> str:
        return config_hash(self.document)


# -- line anchoring ---------------------------------------------------------


def _line_index(text: str) -> dict:
    """Map key paths (tuples) to 1-based source lines."""
    try:
        root = yaml.compose(text, Loader=_Loader)
    except yaml.YAMLError:
        return {}
    index = {}

    def walk(node, path):
        index.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                sub = path + (key.value,)
                index[sub] = key.start_mark.line + 1
                walk(value, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                walk(item, path + (i,))

    if root is not None:
        walk(root, ())
    return index


def _parse_field(field: str) -> tuple:
    parts = []
    for token in field.replace("]", "").split("."):
        if "[" in token:
            head, idx = token.split("[")
            parts += [head, int(idx)]
        else:
            parts.append(token)
    return tuple(parts)


def _anchor(err: ConfigError, index: dict) -> ConfigError:
    if err.field is None or err.line is not None:
        return err
    path = _parse_field(err.field)
    while path and path not in index:
        path = path[:-1]
    line = index.get(path)
    message = str(err)
    if err.field and message.startswith(f"{err.field}: "):
        message = message[len(err.field) + 2:]
    return ConfigError(message, field=err.field, line=line)


# -- validation -------------------------------------------------------------


def _check_keys(section: dict, allowed, where: str):
    if not isinstance(section, dict):
        raise ConfigError("expected a mapping", field=where)
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", field=f"{where}.{key}")


def _number(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", field=where)
    return float(value)


def materialize(raw: Optional[dict]) -> dict:
    """Validate keys and fill every default; returns a new document."""
    raw = {} if raw is None else raw
    _check_keys(raw, DEFAULTS, "config" if raw else "config")
    doc = copy.deepcopy(DEFAULTS)
    for section in ("session", "plant", "sensor", "readout", "analysis", "export"):
        given = raw.get(section) or {}
        _check_keys(given, DEFAULTS[section], section)
        doc[section].update(given)

    control = raw.get("control") or {}
    _check_keys(control, DEFAULTS["control"], "control")
    doc["control"].update(control)
    for sub in ("initial", "offsets"):
        _check_keys(doc["control"][sub] or {}, ControlState.__dataclass_fields__, f"control.{sub}")

    protocols = raw.get("protocols") or {}
    _check_keys(protocols, [k.value for k in KINDS], "protocols")
    order = doc["session"]["protocols"]
    if not isinstance(order, list):
        raise ConfigError("expected a list of protocol names", field="session.protocols")
    for name in order:
        try:
            parse_kind(name)
        except ConfigError as err:
            raise ConfigError(str(err), field="session.protocols") from None
    for name, settings in protocols.items():
        _check_keys(settings or {}, _PROTOCOL_KEYS, f"protocols.{name}")
    doc["protocols"] = {}
    for name in order:
        merged = protocol_defaults(name)
        merged.update(protocols.get(name) or {})
        doc["protocols"][name] = merged

    noise = raw.get("noise") or []
    if not isinstance(noise, list):
        raise ConfigError("expected a list of noise processes", field="noise")
    doc["noise"] = []
    for i, entry in enumerate(noise):
        where = f"noise[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError("expected a mapping", field=where)
        kind = entry.get("kind")
        if kind not in _NOISE_KEYS:
            raise ConfigError(f"unknown noise kind {kind!r}; expected one of {list(_NOISE_KEYS)}",
                              field=f"{where}.kind")
        _check_keys(entry, ("target", "kind") + _NOISE_KEYS[kind], where)
        if entry.get("target") not in PLANT_FIELDS:
            raise ConfigError(f"unknown plant parameter {entry.get('target')!r}",
                              field=f"{where}.target")
        doc["noise"].append(_noise_defaults(dict(entry)))
    return doc


def _noise_defaults(entry: dict) -> dict:
    kind = entry["kind"]
    if kind == "fluctuator":
        entry.setdefault("initial_state", "low")
        entry.setdefault("convention", "symmetric")
    elif kind == "ensemble":
        entry.setdefault("seed", 0)
    return entry


def _noise_spec(entry: dict, i: int) -> NoiseProcessSpec:
    kind = entry["kind"]
    params = {k: v for k, v in entry.items() if k not in ("target", "kind")}
    where = f"noise[{i}]"
    for key in params:
        if key not in ("initial_state", "convention", "count", "seed"):
            params[key] = _number(params[key], f"{where}.{key}")
    try:
        if kind == "fluctuator":
            proc = FluctuatorSpec(**params)
        elif kind == "ensemble":
            proc = EnsembleSpec(**params)
        elif kind in ("linear", "random_walk"):
            proc = DriftSpec(kind, **params)
        else:
            proc = WhiteSpec(**params)
    except TypeError as err:
        raise ConfigError(f"missing parameter: {err}", field=where) from None
    except ConfigError as err:
        message = str(err)
        if err.field:
            message = message[len(err.field) + 2:]
        field = f"{where}.{err.field}" if err.field else where
        raise ConfigError(message, field=field) from None
    return NoiseProcessSpec(entry["target"], proc)


def build(doc: dict) -> LoadedConfig:
    """Turn a materialized document into typed configuration objects."""
    s = doc["session"]
    plant_values = {k: _number(v, f"plant.{k}") for k, v in doc["plant"].items()}
    plant = PlantState(**plant_values)
    sensor = SensorModel(**{k: _number(v, f"sensor.{k}") for k, v in doc["sensor"].items()})
    readout = {k: _number(v, f"readout.{k}") for k, v in doc["readout"].items()}
    spam = None if readout == {"f0": 1.0, "f1": 1.0} else Spam(**readout)
    ctl = doc["control"]
    t_cz = _number(ctl["t_cz_s"], "control.t_cz_s")
    resolution = _number(ctl["waveform_resolution_s"], "control.waveform_resolution_s")
    control = None
    if ctl["initial"]:
        base = asdict(calibrated_control(plant, sensor, t_cz, resolution))
        base.update({k: _number(v, f"control.initial.{k}") for k, v in ctl["initial"].items()})
        control = ControlState(**base)
    offsets = tuple((k, _number(v, f"control.offsets.{k}")) for k, v in ctl["offsets"].items())

    protocols = []
    for name, settings in doc["protocols"].items():
        values = dict(settings)
        for key in ("gain", "t_wait"):
            values[key] = _number(values[key], f"protocols.{name}.{key}")
        for key in ("scale", "clamp"):
            if values[key] is not None:
                values[key] = _number(values[key], f"protocols.{name}.{key}")
        protocols.append(ProtocolConfig(kind=name, **values))

    noise = tuple(_noise_spec(entry, i) for i, entry in enumerate(doc["noise"]))
    seed = s["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer", field="session.seed")
    session = SessionConfig(
        duration=_number(s["duration_s"], "session.duration_s"),
        cycle_period=_number(s["cycle_period_s"], "session.cycle_period_s"),
        protocols=tuple(protocols),
        noise=noise,
        plant=plant,
        control=control,
        control_offsets=offsets,
        sensor=sensor,
        spam=spam,
        t_cz=t_cz,
        waveform_resolution=resolution,
        seed=seed,
        schedule=s["schedule"],
        open_loop=bool(s["open_loop"]),
    )
    a = doc["analysis"]
    analysis = AnalysisOptions(**a)
    if analysis.n_lambda < 1 or analysis.tau_stride < 1 or analysis.welch_segments < 1:
        raise ConfigError("n_lambda, tau_stride and welch_segments must be >= 1", field="analysis")
    e = doc["export"]
    for fmt in e["formats"]:
        if fmt not in ("csv", "svg"):
            raise ConfigError(f"unknown export format {fmt!r}", field="export.formats")
    export = ExportOptions(tuple(e["formats"]), int(e["wavelet_csv_stride"]), int(e["heatmap_columns"]))
    return LoadedConfig(doc, session, analysis, export)


def load_text(text: str, seed: Optional[int] = None) -> LoadedConfig:
    index = _line_index(text)
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ConfigError(f"cannot parse config: {getattr(err, 'problem', err)}",
                          line=mark.line + 1 if mark else None) from None
    try:
        doc = materialize(raw)
        if seed is not None:
            doc["session"]["seed"] = seed
        return build(doc)
    except ConfigError as err:
        raise _anchor(err, index) from None


def load_config(path=None, seed: Optional[int] = None) -> LoadedConfig:
    """Load a config file; ``None`` gives the built-in defaults."""
    if path is None:
        return load_text("{}", seed)
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    return load_text(text, seed)


def bundled_config(name: str) -> str:
    """Text of a config shipped with the package (``default`` or ``fig2``)."""
    return resources.files("spinfeedback").joinpath(f"configs/{name}.yaml").read_text()


def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
