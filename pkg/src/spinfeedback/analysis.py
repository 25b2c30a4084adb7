"""Haar continuous wavelet transform, wavelet variance spectrum and Welch PSD.

Conventions
-----------
The wavelet family is ``psi(t) = lam**-0.5 * haar((t - tau)/lam + 1/2)``:
``+1`` on ``[tau - lam/2, tau)`` and ``-1`` on ``[tau, tau + lam/2)``.  An
upward step therefore produces a negative coefficient and a downward step a
positive one.

Samples are held piecewise constant over ``[t_k, t_k + dt)`` and the
transform integral is evaluated exactly over those cells.  When ``lam/2`` is
a whole number of samples this is the plain Riemann sum over sample times;
otherwise partial cells keep the two halves balanced, so constants still
map to zero.  Outside the record the signal is zero; cells whose wavelet
support leaves the record are flagged in ``coi_mask``.  The series mean is
removed before transforming.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal as sp_signal
from scipy import stats

from .errors import ConfigError, EmptySpectrumError


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray
    sample_interval: float
    start_time: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or len(values) < 8:
            raise ConfigError("time series needs at least 8 samples")
        if not np.all(np.isfinite(values)):
            raise ConfigError("time series contains non-finite values")
        if not (math.isfinite(self.sample_interval) and self.sample_interval > 0):
            raise ConfigError("sample_interval must be > 0")

    def __len__(self):
        return len(self.values)

    @property
    def duration(self) -> float:
        return len(self.values) * self.sample_interval

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.sample_interval * np.arange(len(self.values))


def haar(u):
    """Haar mother wavelet on [0, 1)."""
    u = np.asarray(u, dtype=float)
    out = np.where((u >= 0) & (u < 0.5), 1.0, 0.0)
    out = np.where((u >= 0.5) & (u < 1.0), -1.0, out)
    return out if out.ndim else float(out)


def default_lambda_grid(x: TimeSeries, n: int = 64) -> np.ndarray:
    """``n`` log-spaced widths from two samples to a quarter of the record."""
    return np.geomspace(2.0 * x.sample_interval, x.duration / 4.0, n)


@dataclass
class WaveletMap:
    coefficients: np.ndarray
    lambda_grid: np.ndarray
    tau_grid: np.ndarray
    coi_mask: np.ndarray
    normalization: float

    @property
    def normalized(self) -> np.ndarray:
        """Coefficients divided by the largest magnitude (all zero if degenerate)."""
        if self.normalization == 0:
            return np.zeros_like(self.coefficients)
        return self.coefficients / self.normalization

    @property
    def inv_lambda(self) -> np.ndarray:
        return 1.0 / self.lambda_grid


def cwt(x: TimeSeries, lambda_grid=None, tau_stride: int = 1) -> WaveletMap:
    """Haar CWT of ``x`` on ``lambda_grid`` (s) at every ``tau_stride``-th sample."""
    dt = x.sample_interval
    lam = default_lambda_grid(x) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    if lam.ndim != 1 or len(lam) == 0:
        raise ConfigError("lambda grid must be a non-empty 1-d array")
    if np.any(np.diff(lam) <= 0):
        raise ConfigError("lambda grid must be strictly increasing")
    tol = 1e-9 * dt
    if lam[0] < 2.0 * dt - tol or lam[-1] > x.duration / 2.0 + tol:
        raise ConfigError(f"lambda grid must lie within [{2 * dt!r}, {x.duration / 2!r}] s")
    if int(tau_stride) != tau_stride or tau_stride < 1:
        raise ConfigError("tau_stride must be a positive integer")

    values = x.values - x.values.mean()
    n = len(values)
    edges = x.start_time + dt * np.arange(n + 1)
    cumulative = np.concatenate(([0.0], np.cumsum(values) * dt))
    tau = x.times[::tau_stride]
    f_tau = np.interp(tau, edges, cumulative)
    coef = np.empty((len(lam), len(tau)))
    coi = np.empty((len(lam), len(tau)), dtype=bool)
    lo, hi = edges[0], edges[-1]
    for i, width in enumerate(lam):
        half = 0.5 * width
        left = np.interp(tau - half, edges, cumulative)
        right = np.interp(tau + half, edges, cumulative)
        coef[i] = (2.0 * f_tau - left - right) / math.sqrt(width)
        coi[i] = (tau - lo < half) | (hi - tau < half)
    peak = float(np.max(np.abs(coef))) if coef.size else 0.0
    # round-off left by removing the mean of a constant is not a feature
    scale = float(np.max(np.abs(x.values))) * math.sqrt(lam[-1])
    if peak <= 1e-12 * scale:
        peak = 0.0
    return WaveletMap(coef, lam, tau, coi, peak)


@dataclass
class WaveletSpectrum:
    """Per-width ``sigma**4`` normalized to unit sum.

    ``valid`` marks rows with enough cells to estimate a variance; invalid
    rows hold NaN.  ``degenerate`` is set when every valid row has zero
    variance (e.g. a constant input); values are then all zero.
    """

    lambda_grid: np.ndarray
    values: np.ndarray
    variance: np.ndarray
    valid: np.ndarray
    coi_fraction: np.ndarray
    degenerate: bool = False

    @property
    def inv_lambda(self) -> np.ndarray:
        return 1.0 / self.lambda_grid


def wavelet_spectrum(wmap: WaveletMap, include_coi: bool = False,
                     min_cells: int = 4) -> WaveletSpectrum:
    """Wavelet variance spectrum: sample variance of each row, squared.

    COI cells are excluded unless ``include_coi`` is set.
    """
    rows = len(wmap.lambda_grid)
    variance = np.full(rows, np.nan)
    valid = np.zeros(rows, dtype=bool)
    for i in range(rows):
        row = wmap.coefficients[i]
        if not include_coi:
            row = row[~wmap.coi_mask[i]]
        if len(row) >= min_cells:
            variance[i] = np.var(row, ddof=1)
            valid[i] = True
    if not valid.any():
        raise EmptySpectrumError("no wavelet row has enough cells outside the cone of influence")
    power = variance ** 2
    total = np.nansum(power)
    coi_fraction = wmap.coi_mask.mean(axis=1)
    if total == 0 or not np.isfinite(total) or wmap.normalization == 0:
        values = np.where(valid, 0.0, np.nan)
        return WaveletSpectrum(wmap.lambda_grid, values, variance, valid, coi_fraction, True)
    return WaveletSpectrum(wmap.lambda_grid, power / total, variance, valid, coi_fraction)


@dataclass
class Psd:
    frequency: np.ndarray
    density: np.ndarray
    segment_length: int


def psd_welch(x: TimeSeries, n_segments: int = 8, overlap: float = 0.5,
              detrend: str = "linear") -> Psd:
    """One-sided Welch PSD (units**2/Hz) with Hann windows.

    The segment length is chosen so that ``n_segments`` overlapping segments
    tile the record.
    """
    if n_segments < 1 or not 0.0 <= overlap < 1.0:
        raise ConfigError("need n_segments >= 1 and 0 <= overlap < 1")
    n = len(x)
    nperseg = int(n / (1.0 + (n_segments - 1) * (1.0 - overlap)))
    if nperseg < 4 or n < 2 * nperseg:
        raise ConfigError(f"series of {n} samples too short for {n_segments} Welch segments")
    noverlap = int(round(overlap * nperseg))
    freq, dens = sp_signal.welch(
        x.values,
        fs=1.0 / x.sample_interval,
        window="hann",
        nperseg=nperseg,
        noverlap=noverlap,
        detrend=detrend,
        scaling="density",
        return_onesided=True,
    )
    return Psd(freq, dens, nperseg)


@dataclass
class SpectrumPair:
    """Welch PSD and wavelet spectrum of one series, side by side.

    The wavelet spectrum is indexed by ``1/lambda`` (1/s), read as a
    frequency on the same axis as the PSD.
    """

    psd: Psd
    wavelet: WaveletSpectrum

    def table(self):
        """Rows of (axis_value, psd, wavelet_spectrum) on the union of both axes.

        Missing entries are NaN.
        """
        f = self.psd.frequency[1:]
        rows = [(float(a), float(p), math.nan) for a, p in zip(f, self.psd.density[1:])]
        rows += [(float(a), math.nan, float(w))
                 for a, w in zip(self.wavelet.inv_lambda, self.wavelet.values)]
        rows.sort(key=lambda r: r[0])
        return rows


def spectrum_pair(x: TimeSeries, lambda_grid=None, include_coi: bool = False,
                  n_segments: int = 8, overlap: float = 0.5, tau_stride: int = 1):
    """Convenience: CWT, wavelet spectrum and PSD of one series."""
    wmap = cwt(x, lambda_grid, tau_stride)
    return wmap, SpectrumPair(psd_welch(x, n_segments, overlap), wavelet_spectrum(wmap, include_coi))


@dataclass
class AlignmentReport:
    axis: np.ndarray
    psd: np.ndarray
    wavelet: np.ndarray
    spearman: float
    band: tuple
    coi_edge: Optional[float]

    @property
    def psd_peak(self) -> int:
        return int(np.argmax(self.psd))

    @property
    def wavelet_peak(self) -> int:
        return int(np.argmax(self.wavelet))


def _loglog_interp(x_new, x, y):
    keep = (x > 0) & np.isfinite(y) & (y > 0)
    return np.exp(np.interp(np.log(x_new), np.log(x[keep]), np.log(y[keep])))


def compare_spectra(psd: Psd, spectrum: WaveletSpectrum, n_points: int = 32,
                    coi_fraction: float = 0.1) -> AlignmentReport:
    """Resample both spectra onto a shared log axis and rank-correlate them.

    ``coi_edge`` is the ``1/lambda`` below which more than ``coi_fraction``
    of a row's cells lie in the cone of influence (None if never).
    """
    fmask = (psd.frequency > 0) & (psd.density > 0)
    wmask = spectrum.valid & (spectrum.values > 0)
    if not fmask.any() or not wmask.any():
        raise ValueError("spectra have no positive entries to compare")
    f = psd.frequency[fmask]
    inv = spectrum.inv_lambda[wmask]
    lo = max(f.min(), inv.min())
    hi = min(f.max(), inv.max())
    if not lo < hi:
        raise ValueError(f"PSD band [{f.min()}, {f.max()}] and wavelet band "
                         f"[{inv.min()}, {inv.max()}] do not overlap")
    axis = np.geomspace(lo, hi, n_points)
    p = _loglog_interp(axis, psd.frequency, psd.density)
    # wavelet axis is decreasing in lambda; interpolate on increasing 1/lambda
    order = np.argsort(spectrum.inv_lambda)
    w = _loglog_interp(axis, spectrum.inv_lambda[order], np.where(wmask, spectrum.values, np.nan)[order])
    rho = float(stats.spearmanr(p, w).statistic)
    over = spectrum.coi_fraction > coi_fraction
    edge = float(spectrum.inv_lambda[over].max()) if over.any() else None
    return AlignmentReport(axis, p, w, rho, (float(lo), float(hi)), edge)


def loglog_slope(freq, density, f_lo, f_hi) -> float:
    """Least-squares slope of log(density) against log(freq) over [f_lo, f_hi]."""
    m = (freq >= f_lo) & (freq <= f_hi) & (density > 0)
    if m.sum() < 3:
        raise ValueError("fewer than 3 points in the fit band")
    return float(np.polyfit(np.log10(freq[m]), np.log10(density[m]), 1)[0])


def compensated_peak(freq, density, f_lo=None, f_hi=None, smooth: int = 5):
    """Frequency maximizing ``f * S(f)`` (a Lorentzian knee on 1/f background).

    Returns ``(frequency, contrast)`` where contrast is peak over median of
    the smoothed compensated spectrum.
    """
    m = freq > 0
    if f_lo is not None:
        m &= freq >= f_lo
    if f_hi is not None:
        m &= freq <= f_hi
    f, s = freq[m], density[m]
    comp = f * s
    # smooth in log space with a running mean
    if smooth > 1:
        kernel = np.ones(smooth) / smooth
        comp = np.exp(np.convolve(np.log(comp), kernel, mode="same"))
        edge = smooth // 2
        f, comp = f[edge:len(f) - edge], comp[edge:len(comp) - edge]
    i = int(np.argmax(comp))
    return float(f[i]), float(comp[i] / np.median(comp))
