"""Deterministic SVG rendering of planned paths over an optional field heatmap."""

from __future__ import annotations

from typing import List, Optional, Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .env import Path, path_length

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
# viridis anchors for time, blue-white-red for field values
TIME_RAMP = ((0.267, 0.005, 0.329), (0.230, 0.322, 0.546), (0.128, 0.567, 0.551),
             (0.369, 0.789, 0.383), (0.993, 0.906, 0.144))
FIELD_RAMP = ((0.230, 0.299, 0.754), (0.865, 0.865, 0.865), (0.706, 0.016, 0.150))

PLOT_SIZE = 480.0
MARGIN = 20.0
LEGEND_W = 220.0


def ramp_color(u: float, ramp=TIME_RAMP) -> str:
    """Hex color at position ``u`` in [0, 1] along a piecewise-linear ramp."""
    u = min(max(float(u), 0.0), 1.0) * (len(ramp) - 1)
    i = min(int(u), len(ramp) - 2)
    f = u - i
    rgb = [(1 - f) * a + f * b for a, b in zip(ramp[i], ramp[i + 1])]
    return "#" + "".join(f"{int(round(255 * c)):02x}" for c in rgb)


def _f(v: float) -> str:
    return f"{v:.2f}"


def _field_slice(field):
    """2-D slice of the field for the heatmap: first non-negative time, middle z."""
    vals = field.values
    idx = [slice(None), slice(None)]
    for k in range(2, len(field.axes)):
        a = field.axes[k]
        if field.has_time and k == len(field.axes) - 1:
            nonneg = np.flatnonzero(a >= 0)
            idx.append(int(nonneg[0]) if nonneg.size else 0)
        else:
            idx.append(len(a) // 2)
    return field.axes[0], field.axes[1], vals[tuple(idx)]


def render_svg(paths: Sequence[Path], field=None) -> str:
    """SVG document with one polyline per robot, waypoint markers and a legend.

    Spatio-temporal waypoints are colored by time with a ramp whose labels are
    the minimum and maximum times in ``paths``.
    """
    paths = list(paths)
    xy = np.vstack([p.spatial[:, :2] for p in paths])
    if field is not None:
        lo = np.asarray(field.env.lower[:2], dtype=float)
        hi = np.asarray(field.env.upper[:2], dtype=float)
    else:
        lo, hi = xy.min(0), xy.max(0)
        pad = np.maximum(0.05 * (hi - lo), 1e-9)
        pad = np.where(hi - lo > 0, pad, 1.0)
        lo, hi = lo - pad, hi + pad
    scale = PLOT_SIZE / float(np.max(hi - lo))

    def X(x):
        return MARGIN + (x - lo[0]) * scale

    def Y(y):
        return MARGIN + (hi[1] - y) * scale

    width = 2 * MARGIN + PLOT_SIZE + LEGEND_W
    height = 2 * MARGIN + PLOT_SIZE
    out: List[str] = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}">',
        f'<rect x="0" y="0" width="{_f(width)}" height="{_f(height)}" fill="#ffffff"/>',
    ]

    if field is not None:
        ax, ay, vals = _field_slice(field)
        vmin, vmax = float(vals.min()), float(vals.max())
        span = vmax - vmin if vmax > vmin else 1.0
        dx = np.gradient(ax) if len(ax) > 1 else np.ones(1)
        dy = np.gradient(ay) if len(ay) > 1 else np.ones(1)
        out.append('<g id="heatmap">')
        for i, x in enumerate(ax):
            for j, y in enumerate(ay):
                c = ramp_color((vals[i, j] - vmin) / span, FIELD_RAMP)
                out.append(f'<rect x="{_f(X(x - dx[i] / 2))}" y="{_f(Y(y + dy[j] / 2))}" '
                           f'width="{_f(dx[i] * scale)}" height="{_f(dy[j] * scale)}" fill="{c}"/>')
        out.append("</g>")

    times = [p.times for p in paths if p.has_time]
    tmin = tmax = None
    if times:
        allt = np.concatenate(times)
        tmin, tmax = float(allt.min()), float(allt.max())
    tspan = (tmax - tmin) if times and tmax > tmin else 1.0

    for k, p in enumerate(paths):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_f(X(x))},{_f(Y(y))}" for x, y in p.spatial[:, :2])
        out.append(f'<polyline class="robot" data-robot={quoteattr(str(p.robot_id))} points="{pts}" '
                   f'fill="none" stroke="{color}" stroke-width="2"/>')
        for w, (x, y) in enumerate(p.spatial[:, :2]):
            fill = ramp_color((p.times[w] - tmin) / tspan) if p.has_time else color
            out.append(f'<circle cx="{_f(X(x))}" cy="{_f(Y(y))}" r="4" fill="{fill}" stroke="{color}"/>')

    lx = 2 * MARGIN + PLOT_SIZE
    out.append('<g id="legend" font-family="sans-serif" font-size="12">')
    for k, p in enumerate(paths):
        y = MARGIN + 16 * k + 10
        color = PALETTE[k % len(PALETTE)]
        label = escape(f"robot {p.robot_id}: {path_length(p):.3f} m")
        out.append(f'<line x1="{_f(lx)}" y1="{_f(y - 4)}" x2="{_f(lx + 20)}" y2="{_f(y - 4)}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_f(lx + 26)}" y="{_f(y)}">{label}</text>')
    if times:
        y0 = MARGIN + 16 * len(paths) + 20
        out.append('<defs><linearGradient id="time-ramp" x1="0" y1="0" x2="1" y2="0">')
        for s in range(len(TIME_RAMP)):
            u = s / (len(TIME_RAMP) - 1)
            out.append(f'<stop offset="{_f(u)}" stop-color="{ramp_color(u)}"/>')
        out.append("</linearGradient></defs>")
        out.append(f'<text x="{_f(lx)}" y="{_f(y0)}">time (min)</text>')
        out.append(f'<rect id="time-ramp-bar" data-min="{tmin!r}" data-max="{tmax!r}" x="{_f(lx)}" '
                   f'y="{_f(y0 + 6)}" width="160" height="12" fill="url(#time-ramp)"/>')
        out.append(f'<text class="ramp-min" x="{_f(lx)}" y="{_f(y0 + 32)}">{tmin!r}</text>')
        out.append(f'<text class="ramp-max" x="{_f(lx + 160)}" y="{_f(y0 + 32)}" '
                   f'text-anchor="end">{tmax!r}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
