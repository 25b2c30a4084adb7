"""On-disk formats: correction-log CSVs, JSON sidecars, wavelet and spectra CSVs.

Floats are written with ``repr`` (shortest round-trip form), so reading a
file back reproduces every value bit for bit.  All writes go through a
temporary file in the target directory followed by ``os.replace``.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .feedback import CorrectionLog, ProtocolSeries, parse_kind

FORMAT_VERSION = "1"
LOG_COLUMNS = ("time_s", "value_raw", "value_normalized", "estimator", "correction")
WAVELET_COLUMNS = ("lambda_s", "tau_s", "coefficient", "in_coi")
SPECTRA_COLUMNS = ("axis_value", "psd", "wavelet_spectrum")
SIDECAR = "session.json"


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(value: float) -> str:
    return repr(float(value))


def _rows_text(header, columns) -> str:
    lines = [",".join(header)]
    lines += [",".join(row) for row in zip(*columns)]
    return "\n".join(lines) + "\n"


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n"


# -- correction logs ----------------------------------------------------------


def log_filename(kind) -> str:
    return f"{parse_kind(kind).value}.csv"


def series_csv(series: ProtocolSeries) -> str:
    columns = [[_fmt(v) for v in getattr(series, name)] for name in LOG_COLUMNS]
    return _rows_text(LOG_COLUMNS, columns)


def write_log(log: CorrectionLog, out_dir, config_echo=None) -> list:
    """Write one CSV per protocol plus the JSON sidecar; returns the paths."""
    out_dir = Path(out_dir)
    paths = [atomic_write_text(out_dir / log_filename(kind), series_csv(s))
             for kind, s in log.series.items()]
    meta = dict(log.metadata)
    meta["format_version"] = FORMAT_VERSION
    meta["files"] = [p.name for p in paths]
    if config_echo is not None:
        meta["config"] = config_echo
    paths.append(atomic_write_text(out_dir / SIDECAR, dump_json(meta)))
    return paths


def _parse_float(text: str, path, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"{path}: row {row}, column {column!r}: not a number: {text!r}") from None


def read_series_csv(path) -> dict:
    """Read one correction-log CSV into column arrays, checking the schema."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as err:
        raise SchemaError(f"{path}: cannot read: {err}") from None
    if not lines:
        raise SchemaError(f"{path}: empty file, expected header {','.join(LOG_COLUMNS)}")
    header = lines[0].split(",")
    for i, name in enumerate(LOG_COLUMNS):
        if i >= len(header):
            raise SchemaError(f"{path}: missing column {name!r}")
        if header[i] != name:
            raise SchemaError(f"{path}: column {i + 1} is {header[i]!r}, expected {name!r}")
    if len(header) > len(LOG_COLUMNS):
        raise SchemaError(f"{path}: unexpected column {header[len(LOG_COLUMNS)]!r}")
    data = {name: [] for name in LOG_COLUMNS}
    for row, line in enumerate(lines[1:], start=1):
        cells = line.split(",")
        if len(cells) != len(LOG_COLUMNS):
            raise SchemaError(f"{path}: row {row}: expected {len(LOG_COLUMNS)} values, "
                              f"got {len(cells)}")
        for name, cell in zip(LOG_COLUMNS, cells):
            data[name].append(_parse_float(cell, path, row, name))
    if not data["time_s"]:
        raise SchemaError(f"{path}: no data rows")
    out = {name: np.asarray(v, dtype=float) for name, v in data.items()}
    t = out["time_s"]
    if len(t) > 1:
        steps = np.diff(t)
        if np.any(steps <= 0):
            bad = int(np.argmax(steps <= 0)) + 2
            raise SchemaError(f"{path}: row {bad}, column 'time_s': times must increase")
    return out


def read_log(directory) -> CorrectionLog:
    """Read a directory written by :func:`write_log`."""
    directory = Path(directory)
    try:
        meta = json.loads((directory / SIDECAR).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise SchemaError(f"{directory / SIDECAR}: unreadable sidecar: {err}") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"{directory / SIDECAR}: format_version "
                          f"{meta.get('format_version')!r}, expected {FORMAT_VERSION!r}")
    series = {}
    for name, info in meta.get("protocols", {}).items():
        kind = parse_kind(name)
        cols = read_series_csv(directory / log_filename(kind))
        series[kind] = ProtocolSeries(
            kind=kind,
            control_field=info["control_field"],
            normalization=info["normalization"],
            time_s=cols["time_s"],
            value_raw=cols["value_raw"],
            value_normalized=cols["value_normalized"],
            estimator=cols["estimator"],
            correction=cols["correction"],
        )
    return CorrectionLog(series, meta)


# -- analysis products --------------------------------------------------------


def wavelet_csv(wmap, stride: int = 1) -> str:
    """Long-form CSV of W(lambda, tau), keeping every ``stride``-th column."""
    cols = np.arange(0, wmap.coefficients.shape[1], max(1, int(stride)))
    lam = np.repeat(wmap.lambda_grid, len(cols))
    tau = np.tile(wmap.tau_grid[cols], len(wmap.lambda_grid))
    coef = wmap.coefficients[:, cols].ravel()
    coi = wmap.coi_mask[:, cols].ravel()
    columns = [[_fmt(v) for v in lam], [_fmt(v) for v in tau], [_fmt(v) for v in coef],
               ["1" if c else "0" for c in coi]]
    return _rows_text(WAVELET_COLUMNS, columns)


def spectra_csv(pair) -> str:
    rows = pair.table()
    columns = [["" if math.isnan(v) else _fmt(v) for v in col] for col in zip(*rows)]
    return _rows_text(SPECTRA_COLUMNS, columns)


def read_spectra_csv(path) -> dict:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split(",") != list(SPECTRA_COLUMNS):
        raise SchemaError(f"{path}: expected header {','.join(SPECTRA_COLUMNS)}")
    cells = [line.split(",") for line in lines[1:]]
    return {name: np.array([float(c[i]) if c[i] else math.nan for c in cells])
            for i, name in enumerate(SPECTRA_COLUMNS)}
