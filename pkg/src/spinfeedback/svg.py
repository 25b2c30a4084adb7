"""Dependency-free SVG rendering for traces, wavelet heatmaps and spectra."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 720, 360
MARGIN = dict(left=80, right=90, top=30, bottom=50)
PSD_COLOR = "#1f4e9c"
WAVELET_COLOR = "#c0392b"
TRACE_COLOR = "#222222"


def diverging_color(v: float) -> str:
    """Blue (-1) to white (0) to red (+1); values are clipped."""
    v = 0.0 if not math.isfinite(v) else max(-1.0, min(1.0, v))
    if v >= 0:
        r, g, b = 255, 255 * (1 - v), 255 * (1 - v)
    else:
        r, g, b = 255 * (1 + v), 255 * (1 + v), 255
    return f"#{round(r):02x}{round(g):02x}{round(b):02x}"


def _doc(body, width=WIDTH, height=HEIGHT, title=""):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n')
    if title:
        head += f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>\n'
    return head + "\n".join(body) + "\n</svg>\n"


def _plot_box():
    x0, y0 = MARGIN["left"], MARGIN["top"]
    return x0, y0, WIDTH - MARGIN["right"] - x0, HEIGHT - MARGIN["bottom"] - y0


def _nice_ticks(lo, hi, n=5):
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def _axes(x_range, y_range, x_label, y_label, log_x=False, log_y=False):
    x0, y0, w, h = _plot_box()
    out = [f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="black"/>',
           f'<text x="{x0 + w / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_label)}</text>',
           f'<text x="18" y="{y0 + h / 2}" text-anchor="middle" '
           f'transform="rotate(-90 18 {y0 + h / 2})">{escape(y_label)}</text>']

    def ticks(lo, hi, log):
        if log:
            return [10.0 ** k for k in range(math.ceil(lo), math.floor(hi) + 1)]
        return _nice_ticks(lo, hi)

    sx, sy = _scales(x_range, y_range)
    for t in ticks(*x_range, log_x):
        px = sx(math.log10(t) if log_x else t)
        out.append(f'<line x1="{px:.2f}" y1="{y0 + h}" x2="{px:.2f}" y2="{y0 + h + 4}" stroke="black"/>')
        out.append(f'<text x="{px:.2f}" y="{y0 + h + 16}" text-anchor="middle">{t:.3g}</text>')
    for t in ticks(*y_range, log_y):
        py = sy(math.log10(t) if log_y else t)
        out.append(f'<line x1="{x0 - 4}" y1="{py:.2f}" x2="{x0}" y2="{py:.2f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 6}" y="{py + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    return out


def _scales(x_range, y_range):
    x0, y0, w, h = _plot_box()
    xl, xh = x_range
    yl, yh = y_range
    xs = w / (xh - xl) if xh > xl else 0.0
    ys = h / (yh - yl) if yh > yl else 0.0
    return (lambda x: x0 + (x - xl) * xs), (lambda y: y0 + h - (y - yl) * ys)


def _range(v, pad=0.05):
    v = np.asarray(v, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


def _polyline(x, y, sx, sy, color, width=1.0):
    pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y)
                   if math.isfinite(a) and math.isfinite(b))
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>'


def _decimate(x, y, max_points=4000):
    n = len(x)
    if n <= max_points:
        return np.asarray(x), np.asarray(y)
    # keep min and max of each bucket so jumps stay visible
    edges = np.linspace(0, n, max_points // 2 + 1).astype(int)
    xs, ys = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        seg = y[a:b]
        i, j = a + int(np.argmin(seg)), a + int(np.argmax(seg))
        for k in sorted((i, j)):
            xs.append(x[k])
            ys.append(y[k])
    return np.asarray(xs), np.asarray(ys)


def trace_svg(time_s, values, title="", y_label="value", time_unit="min") -> str:
    div = 60.0 if time_unit == "min" else 1.0
    t = np.asarray(time_s, dtype=float) / div
    y = np.asarray(values, dtype=float)
    t, y = _decimate(t, y)
    xr, yr = _range(t, 0.0), _range(y)
    sx, sy = _scales(xr, yr)
    body = _axes(xr, yr, f"time ({time_unit})", y_label)
    body.append(_polyline(t, y, sx, sy, TRACE_COLOR, 0.8))
    return _doc(body, title=title)


def _block_mean(a, n_cols):
    n = a.shape[1]
    if n <= n_cols:
        return a, np.arange(n)
    edges = np.linspace(0, n, n_cols + 1).astype(int)
    out = np.add.reduceat(a, edges[:-1], axis=1) / np.diff(edges)
    return out, edges[:-1]


def heatmap_svg(wmap, title="", max_columns=240, time_unit="min") -> str:
    """Grid of filled cells, coefficients scaled by max |W|, COI hatched grey.

    Rows run from large lambda (bottom) to small lambda (top), so 1/lambda
    grows upward.
    """
    norm = wmap.normalized
    cells, starts = _block_mean(np.where(np.isfinite(norm), norm, 0.0), max_columns)
    coi, _ = _block_mean(wmap.coi_mask.astype(float), max_columns)
    n_rows, n_cols = cells.shape
    x0, y0, w, h = _plot_box()
    cw, ch = w / n_cols, h / n_rows
    body = []
    for i in range(n_rows):
        py = y0 + i * ch
        for j in range(n_cols):
            body.append(f'<rect x="{x0 + j * cw:.2f}" y="{py:.2f}" width="{cw + 0.05:.2f}" '
                        f'height="{ch + 0.05:.2f}" fill="{diverging_color(cells[i, j])}"/>')
            if coi[i, j] >= 0.5:
                body.append(f'<rect x="{x0 + j * cw:.2f}" y="{py:.2f}" width="{cw + 0.05:.2f}" '
                            f'height="{ch + 0.05:.2f}" fill="#808080" fill-opacity="0.35"/>')
    div = 60.0 if time_unit == "min" else 1.0
    tau = wmap.tau_grid / div
    body.append(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="black"/>')
    for t in _nice_ticks(float(tau[0]), float(tau[-1])):
        px = x0 + (t - tau[0]) / (tau[-1] - tau[0]) * w if tau[-1] > tau[0] else x0
        body.append(f'<line x1="{px:.2f}" y1="{y0 + h}" x2="{px:.2f}" y2="{y0 + h + 4}" stroke="black"/>')
        body.append(f'<text x="{px:.2f}" y="{y0 + h + 16}" text-anchor="middle">{t:.3g}</text>')
    inv = wmap.inv_lambda
    lo, hi = math.log10(inv[-1]), math.log10(inv[0])
    for k in range(math.ceil(lo), math.floor(hi) + 1):
        frac = (k - lo) / (hi - lo) if hi > lo else 0.0
        py = y0 + h - frac * h
        body.append(f'<text x="{x0 - 6}" y="{py + 4:.2f}" text-anchor="end">1e{k}</text>')
    body.append(f'<text x="{x0 + w / 2}" y="{HEIGHT - 12}" text-anchor="middle">tau ({time_unit})</text>')
    body.append(f'<text x="18" y="{y0 + h / 2}" text-anchor="middle" '
                f'transform="rotate(-90 18 {y0 + h / 2})">1/lambda (1/s)</text>')
    body += _legend(x0 + w + 20, y0, h)
    return _doc(body, title=title)


def _legend(x, y, h, n=50):
    out, step = [], h / n
    for k in range(n):
        v = 1.0 - 2.0 * (k + 0.5) / n
        out.append(f'<rect x="{x}" y="{y + k * step:.2f}" width="14" height="{step + 0.05:.2f}" '
                   f'fill="{diverging_color(v)}"/>')
    out.append(f'<rect x="{x}" y="{y}" width="14" height="{h}" fill="none" stroke="black"/>')
    for v, py in ((1, y), (0, y + h / 2), (-1, y + h)):
        out.append(f'<text x="{x + 18}" y="{py + 4:.2f}">{v:+d}</text>')
    out.append(f'<text x="{x + 7}" y="{y + h + 16}" text-anchor="middle">W/max|W|</text>')
    return out


def spectra_svg(pair, title="") -> str:
    """PSD (blue) against frequency and wavelet spectrum (red) against 1/lambda.

    Each curve is scaled to its own maximum so both share one log axis.
    """
    curves = []
    f, p = pair.psd.frequency, pair.psd.density
    curves.append((f, p, PSD_COLOR, "Welch PSD"))
    w = pair.wavelet
    curves.append((w.inv_lambda, w.values, WAVELET_COLOR, "wavelet spectrum"))
    logs = []
    for x, y, color, label in curves:
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = (x > 0) & (y > 0) & np.isfinite(y)
        if keep.any():
            y = y[keep] / y[keep].max()
            logs.append((np.log10(x[keep]), np.log10(y), color, label))
    if not logs:
        x0, y0, pw, ph = _plot_box()
        body = [f'<text x="{x0 + pw / 2}" y="{y0 + ph / 2}" text-anchor="middle">'
                'degenerate spectrum (no power)</text>']
        return _doc(body, title=title)
    xr = _range(np.concatenate([c[0] for c in logs]), 0.02)
    yr = _range(np.concatenate([c[1] for c in logs]), 0.02)
    sx, sy = _scales(xr, yr)
    body = _axes(xr, yr, "frequency, 1/lambda (1/s)", "relative power", log_x=True, log_y=True)
    x0, y0, _, _ = _plot_box()
    for k, (lx, ly, color, label) in enumerate(logs):
        body.append(_polyline(lx, ly, sx, sy, color, 1.2))
        body.append(f'<text x="{x0 + 8}" y="{y0 + 16 + 14 * k}" fill="{color}">{label}</text>')
    return _doc(body, title=title)
