"""Self-contained SVG regret curves.

Axis rule: each axis spans exactly the data extrema (mean minus and plus one
standard deviation for y, clipped at 0).  Five ticks are placed evenly between
them (evenly in log space for log axes) and labelled with ``format(v, ".4g")``,
so the first and last labels are the extrema at four significant digits.  A
degenerate range ``[v, v]`` is widened to ``[v, v + 1]`` (``[v, 10 v]`` on a log
axis).  On a log axis non-positive values are raised to the smallest positive
value present, or ``1e-12``.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
N_TICKS = 5
LOG_FLOOR = 1e-12


class PlotError(ValueError):
    """Nothing to draw."""


def tick_label(v: float) -> str:
    return format(float(v), ".4g")


def _axis(lo: float, hi: float, log: bool):
    if log:
        lo, hi = math.log10(lo), math.log10(hi)
    if hi <= lo:
        hi = lo + 1.0
    ticks = np.linspace(lo, hi, N_TICKS)
    values = 10.0**ticks if log else ticks

    def to_unit(v):
        v = np.asarray(v, dtype=float)
        x = np.log10(v) if log else v
        return (x - lo) / (hi - lo)

    return to_unit, values


def _positive(a: np.ndarray, floor: float) -> np.ndarray:
    return np.where(a > 0, a, floor)


def render_regret_svg(results: dict, log_x: bool = False, log_y: bool = False,
                      width: int = 720, height: int = 440, title: str | None = None) -> str:
    """Cumulative-regret curves (mean line with a shaded one-stddev band) per learner.

    ``results`` is a result-set JSON document as written by ``run_experiment``.
    """
    series = []
    for key, entry in results.get("learners", {}).items():
        curve = entry.get("curve", {})
        if curve.get("episodes"):
            x = np.asarray(curve["episodes"], dtype=float)
            m = np.asarray(curve["mean"], dtype=float)
            s = np.asarray(curve["std"], dtype=float)
            series.append((entry.get("name", key), x, m, np.maximum(m - s, 0.0), m + s))
    if not series:
        raise PlotError("no regret series to plot")
    xs = np.concatenate([s[1] for s in series])
    ys = np.concatenate([np.concatenate([s[3], s[4]]) for s in series])
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise PlotError("non-finite regret values")
    y_floor = ys[ys > 0].min() if log_y and np.any(ys > 0) else LOG_FLOOR
    if log_y:
        ys = _positive(ys, y_floor)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if log_x and x_hi <= x_lo:
        x_hi = x_lo * 10
    if log_y and y_hi <= y_lo:
        y_hi = y_lo * 10
    fx, xticks = _axis(x_lo, x_hi, log_x)
    fy, yticks = _axis(y_lo, y_hi, log_y)

    ml, mr, mt, mb = 70, 150, 30, 50
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + pw * fx(v)

    def py(v):
        v = _positive(np.asarray(v, dtype=float), y_floor) if log_y else v
        return mt + ph * (1.0 - fy(v))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    if title:
        out.append(f'<text x="{ml}" y="18" font-size="13">{escape(title)}</text>')
    for v in xticks:
        x = float(px(v))
        out.append(f'<line x1="{x:.2f}" y1="{mt + ph}" x2="{x:.2f}" y2="{mt + ph + 5}" stroke="#333"/>')
        out.append(f'<text class="xtick" x="{x:.2f}" y="{mt + ph + 18}" text-anchor="middle">{tick_label(v)}</text>')
    for v in yticks:
        y = float(py(v))
        out.append(f'<line x1="{ml - 5}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="#333"/>')
        out.append(f'<text class="ytick" x="{ml - 8}" y="{y + 4:.2f}" text-anchor="end">{tick_label(v)}</text>')
    out.append(f'<text x="{ml + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">episode</text>')
    out.append(
        f'<text x="16" y="{mt + ph / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {mt + ph / 2:.2f})">cumulative regret</text>'
    )
    for i, (name, x, m, lo, hi) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        X, M, LO, HI = px(x), py(m), py(lo), py(hi)
        band = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(np.concatenate([X, X[::-1]]), np.concatenate([HI, LO[::-1]])))
        out.append(f'<polygon class="band" points="{band}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(X, M))
        out.append(f'<polyline class="mean" points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 14 + 18 * i
        out.append(f'<line x1="{ml + pw + 12}" y1="{ly}" x2="{ml + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text class="legend" x="{ml + pw + 36}" y="{ly + 4}">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
