"""Figure-2 style report: every protocol's trace, wavelet map and spectra.

Besides the panels, the report carries three automated checks: detuning
plateaus (histogram modes of a median-filtered trace), the fast-jump
residual about the plateau means, and the growth of wavelet feature width
with lambda.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d, median_filter
from scipy.signal import find_peaks
from scipy.stats import spearmanr

from . import io, svg
from .config import LoadedConfig, bundled_config, load_text
from .feedback import ProtocolKind
from .pipeline import analyze_series, series_from_columns, simulate, write_analysis

PANELS = (
    ("a", ProtocolKind.DETUNING, "detuning voltage"),
    ("b", ProtocolKind.EXCHANGE, "J gate voltage"),
    ("c", ProtocolKind.LARMOR_Q1, "IF frequency Q1"),
    ("d", ProtocolKind.LARMOR_Q2, "IF frequency Q2"),
    ("e", ProtocolKind.PHASE_Q1, "IF phase Q1"),
    ("f", ProtocolKind.PHASE_Q2, "IF phase Q2"),
    ("g", ProtocolKind.RABI_Q1, "IQ amplitude Q1"),
    ("h", ProtocolKind.RABI_Q2, "IQ amplitude Q2"),
)
INSET_PANELS = ("b", "e", "f")
INSET_SECONDS = 150.0
UNITS = {"eps_offset": "mV", "v_j": "mV", "f_if_1": "Hz", "f_if_2": "Hz",
         "phase_1": "rad", "phase_2": "rad", "amp_1": "", "amp_2": "", "t_pi2_1": "s",
         "t_pi2_2": "s"}


@dataclass
class PlateauReport:
    levels: np.ndarray
    occupancy: np.ndarray
    distinct: np.ndarray
    residual_std: float
    n_runs: int

    @property
    def min_separation(self) -> float:
        if len(self.distinct) < 2:
            return float("nan")
        return float(np.min(np.diff(self.distinct)))


def plateaus(trace, window: int = 201, bin_width: float = 0.005, min_fraction: float = 0.01,
             separation: float = 0.1) -> PlateauReport:
    """Histogram-mode plateau levels of a piecewise-constant noisy trace.

    The trace is median filtered over ``window`` samples, the histogram of
    the filtered values is smoothed, and its peaks holding at least
    ``min_fraction`` of the samples are the plateau levels.  ``distinct`` is
    the greedy bottom-up subset of levels spaced at least ``separation``
    apart.  Each sample is assigned to the nearest level of its filtered
    value; the residual is the trace minus the mean of its contiguous run.
    """
    x = np.asarray(trace, dtype=float)
    smooth = median_filter(x, size=min(window, len(x)), mode="nearest")
    edges = np.arange(smooth.min() - 4 * bin_width, smooth.max() + 4 * bin_width, bin_width)
    counts, _ = np.histogram(smooth, edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    hist = gaussian_filter1d(counts.astype(float), 1.5)
    spacing = max(1, int(round(0.5 * separation / bin_width)))
    peaks, _ = find_peaks(hist, height=min_fraction * len(x), distance=spacing)
    if len(peaks) == 0:
        peaks = np.array([int(np.argmax(hist))])
    levels = centers[peaks]

    distinct = [levels[0]]
    for level in levels[1:]:
        if level - distinct[-1] >= separation:
            distinct.append(level)

    label = np.argmin(np.abs(smooth[:, None] - levels[None, :]), axis=1)
    occupancy = np.bincount(label, minlength=len(levels)) / len(x)
    cuts = np.flatnonzero(np.diff(label)) + 1
    bounds = np.r_[0, cuts, len(x)]
    residual = np.empty_like(x)
    for a, b in zip(bounds[:-1], bounds[1:]):
        residual[a:b] = x[a:b] - x[a:b].mean()
    return PlateauReport(levels, occupancy, np.array(distinct), float(residual.std()),
                         len(bounds) - 1)


def feature_widths(wmap, threshold: float = 0.5) -> np.ndarray:
    """Per-row correlation length of W(lambda, .) in seconds.

    The lag at which the row autocorrelation first drops below
    ``threshold``.  For any input the Haar response at width lambda is
    smooth over about lambda, so features widen as 1/lambda decreases.
    """
    dtau = float(wmap.tau_grid[1] - wmap.tau_grid[0])
    widths = np.full(len(wmap.lambda_grid), np.nan)
    for i, row in enumerate(wmap.coefficients):
        row = row[~wmap.coi_mask[i]]
        if len(row) < 8 or not np.any(row):
            continue
        row = row - row.mean()
        n = len(row)
        spec = np.fft.rfft(row, 2 * n)
        acf = np.fft.irfft(spec * np.conj(spec))[:n]
        acf /= acf[0]
        below = np.flatnonzero(acf < threshold)
        if len(below):
            widths[i] = below[0] * dtau
    return widths


def widening(wmap) -> dict:
    widths = feature_widths(wmap)
    ok = np.isfinite(widths)
    if ok.sum() < 3:
        return {"spearman": float("nan"), "passed": False, "widths_s": widths.tolist()}
    rho = float(spearmanr(wmap.lambda_grid[ok], widths[ok])[0])
    grows = bool(widths[ok][-1] > widths[ok][0])
    return {"spearman": rho, "passed": bool(rho >= 0.9 and grows), "widths_s": widths.tolist()}


def fig2_config(seed=None) -> LoadedConfig:
    return load_text(bundled_config("fig2"), seed)


def replicate_fig2(out_dir, cfg: LoadedConfig = None, quiet: bool = True) -> dict:
    """Run the session, write logs and all panels, return the check report."""
    cfg = fig2_config() if cfg is None else cfg
    out_dir = Path(out_dir)
    log = simulate(cfg, out_dir / "logs")
    panels = {}
    for letter, kind, label in PANELS:
        if kind not in log.series:
            continue
        s = log.series[kind]
        x = series_from_columns(s.time_s, s.value_normalized, kind.value)
        result = analyze_series(x, kind.value, cfg.analysis)
        group = out_dir / f"{letter}_{kind.value}"
        unit = UNITS.get(s.control_field, "")
        y_label = f"{s.control_field} ({unit})" if unit else s.control_field
        write_analysis(result, group, cfg.export, y_label=f"{y_label}, normalized",
                       title=f"({letter}) {label}")
        if "svg" in cfg.export.formats:
            io.atomic_write_text(group / f"{kind.value}_raw.svg",
                                 svg.trace_svg(s.time_s, s.value_raw, f"({letter}) {label}", y_label))
            if letter in INSET_PANELS:
                keep = s.time_s <= INSET_SECONDS
                io.atomic_write_text(group / f"{kind.value}_inset.svg",
                                     svg.trace_svg(s.time_s[keep], s.value_raw[keep],
                                                   f"({letter}) first 2.5 min", y_label,
                                                   time_unit="s"))
        panels[letter] = {
            "protocol": kind.value,
            "control_field": s.control_field,
            "warnings": result.warnings,
            "widening": widening(result.wmap),
        }
        if result.report is not None:
            panels[letter]["spearman_psd_wavelet"] = result.report.spearman
        if not quiet:
            print(f"panel ({letter}) {kind.value}: done")

    report = {"format_version": io.FORMAT_VERSION, "config_hash": cfg.digest,
              "panels": panels, "n_panels": len(panels)}
    if ProtocolKind.DETUNING in log.series:
        p = plateaus(log.series[ProtocolKind.DETUNING].value_raw)
        report["detuning"] = {
            "levels_mV": p.levels.tolist(),
            "occupancy": p.occupancy.tolist(),
            "distinct_levels_mV": p.distinct.tolist(),
            "n_distinct": len(p.distinct),
            "min_separation_mV": p.min_separation,
            "residual_std_mV": p.residual_std,
            "plateaus_passed": bool(len(p.distinct) >= 3),
            "residual_passed": bool(abs(p.residual_std - 0.05) <= 0.025),
        }
    report["widening_passed"] = all(v["widening"]["passed"] for v in panels.values())
    io.atomic_write_text(out_dir / "report.json", io.dump_json(report))
    return report
