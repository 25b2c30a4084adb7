"""Session and analysis orchestration shared by the command line tools."""

from __future__ import annotations

import dataclasses
import shutil
from pathlib import Path
from typing import Optional

import numpy as np

from . import io, svg
from .analysis import (SpectrumPair, TimeSeries, compare_spectra, cwt, psd_welch,
                       wavelet_spectrum)
from .config import AnalysisOptions, ExportOptions, LoadedConfig
from .errors import ConfigError, EmptySpectrumError, SchemaError
from .feedback import CorrectionLog, run_session


def simulate(cfg: LoadedConfig, out_dir) -> CorrectionLog:
    """Run the session and write its log.  Nothing is left behind on failure."""
    out_dir = Path(out_dir)
    existed = out_dir.exists()
    written = []
    try:
        log = run_session(cfg.session, metadata={"config_hash": cfg.digest})
        written = io.write_log(log, out_dir, config_echo=cfg.document)
    except BaseException:
        for path in written:
            Path(path).unlink(missing_ok=True)
        if not existed and out_dir.exists():
            shutil.rmtree(out_dir, ignore_errors=True)
        raise
    return log


def lambda_grid(x: TimeSeries, opts: AnalysisOptions) -> np.ndarray:
    lo = 2.0 * x.sample_interval if opts.lambda_min_s is None else opts.lambda_min_s
    hi = x.duration / 4.0 if opts.lambda_max_s is None else opts.lambda_max_s
    if opts.n_lambda == 1:
        return np.array([lo])
    return np.geomspace(lo, hi, opts.n_lambda)


def series_from_columns(time_s, values, name="series") -> TimeSeries:
    t = np.asarray(time_s, dtype=float)
    if len(t) < 8:
        raise SchemaError(f"{name}: need at least 8 rows for analysis, got {len(t)}")
    steps = np.diff(t)
    dt = float(np.median(steps))
    bad = np.abs(steps - dt) > 1e-6 * dt
    if bad.any():
        row = int(np.argmax(bad)) + 2
        raise SchemaError(f"{name}: row {row}, column 'time_s': sampling is not uniform")
    return TimeSeries(np.asarray(values, dtype=float), dt, float(t[0]))


@dataclasses.dataclass
class SeriesAnalysis:
    name: str
    series: TimeSeries
    wmap: object
    pair: Optional[SpectrumPair]
    report: Optional[object]
    warnings: list


def analyze_series(x: TimeSeries, name: str, opts: AnalysisOptions) -> SeriesAnalysis:
    wmap = cwt(x, lambda_grid(x, opts), opts.tau_stride)
    warnings = []
    pair = report = None
    try:
        spectrum = wavelet_spectrum(wmap, opts.include_coi)
    except EmptySpectrumError as err:
        warnings.append(str(err))
        spectrum = None
    if spectrum is not None:
        if spectrum.degenerate:
            warnings.append(f"{name}: degenerate wavelet spectrum (series has no variation)")
        try:
            pair = SpectrumPair(psd_welch(x, opts.welch_segments, opts.welch_overlap), spectrum)
        except ConfigError as err:
            warnings.append(f"{name}: no PSD: {err}")
        if pair is not None and not spectrum.degenerate:
            try:
                report = compare_spectra(pair.psd, spectrum, coi_fraction=opts.coi_fraction)
            except ValueError as err:
                warnings.append(f"{name}: {err}")
    return SeriesAnalysis(name, x, wmap, pair, report, warnings)


def write_analysis(result: SeriesAnalysis, out_dir, export: ExportOptions,
                   y_label="value", title=None) -> list:
    out_dir = Path(out_dir)
    name, title = result.name, title or result.name
    paths = []
    if "csv" in export.formats:
        paths.append(io.atomic_write_text(out_dir / f"{name}_wavelet.csv",
                                          io.wavelet_csv(result.wmap, export.wavelet_csv_stride)))
        if result.pair is not None:
            paths.append(io.atomic_write_text(out_dir / f"{name}_spectra.csv",
                                              io.spectra_csv(result.pair)))
    if "svg" in export.formats:
        x = result.series
        paths.append(io.atomic_write_text(out_dir / f"{name}_trace.svg",
                                          svg.trace_svg(x.times, x.values,
                                                        title, y_label)))
        paths.append(io.atomic_write_text(out_dir / f"{name}_heatmap.svg",
                                          svg.heatmap_svg(result.wmap, title,
                                                          export.heatmap_columns)))
        if result.pair is not None:
            paths.append(io.atomic_write_text(out_dir / f"{name}_spectra.svg",
                                              svg.spectra_svg(result.pair, title)))
    return paths


def analyze_files(inputs, out_dir, opts: AnalysisOptions, export: ExportOptions,
                  column: str = "value_normalized") -> list:
    """Analyze correction-log CSVs (or directories of them) in sorted order."""
    files = []
    for item in inputs:
        item = Path(item)
        if item.is_dir():
            files += sorted(p for p in item.glob("*.csv"))
        else:
            files.append(item)
    if not files:
        raise SchemaError("no input CSV files found")
    results = []
    for path in files:
        cols = io.read_series_csv(path)
        x = series_from_columns(cols["time_s"], cols[column], str(path))
        result = analyze_series(x, path.stem, opts)
        write_analysis(result, out_dir, export, y_label=column)
        results.append(result)
    summary = {
        "format_version": io.FORMAT_VERSION,
        "column": column,
        "series": {r.name: _summary(r) for r in results},
    }
    io.atomic_write_text(Path(out_dir) / "analysis.json", io.dump_json(summary))
    return results


def _summary(r: SeriesAnalysis) -> dict:
    out = {"rows": len(r.series), "warnings": r.warnings,
           "max_abs_coefficient": r.wmap.normalization}
    if r.report is not None:
        out.update(spearman=r.report.spearman, band=list(r.report.band),
                   coi_edge=r.report.coi_edge)
    return out
