"""Minimal SVG writers: line charts, scatter overlays and heatmaps.

Output is plain text with fixed-precision coordinates so reruns on the same
data produce identical files.
"""

from __future__ import annotations

import math
from html import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=64, right=150, top=36, bottom=48)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out, t = [], start
    while t <= hi + 1e-9 * step:
        out.append(round(t, 12))
        t += step
    return out


def _label(v: float) -> str:
    return f"{v:g}"


class _Frame:
    """Maps data coordinates into the plotting rectangle."""

    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            pad = abs(self.y0) * 0.05 or 1.0
            self.y0, self.y1 = self.y0 - pad, self.y1 + pad
        self.left, self.top = MARGIN["left"], MARGIN["top"]
        self.w = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(self, x):
        return self.left + (x - self.x0) / (self.x1 - self.x0) * self.w

    def py(self, y):
        return self.top + (self.y1 - y) / (self.y1 - self.y0) * self.h


def _axes(f: _Frame, title, xlabel, ylabel) -> list[str]:
    parts = [
        f'<rect x="{f.left}" y="{f.top}" width="{f.w}" height="{f.h}" fill="none" stroke="#333"/>',
        f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{f.left + f.w / 2:.0f}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{f.top + f.h / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {f.top + f.h / 2:.0f})">{escape(ylabel)}</text>',
    ]
    for t in _ticks(f.x0, f.x1):
        x = _fmt(f.px(t))
        parts.append(f'<line x1="{x}" y1="{f.top + f.h}" x2="{x}" y2="{f.top + f.h + 4}" stroke="#333"/>')
        parts.append(f'<text x="{x}" y="{f.top + f.h + 16}" text-anchor="middle" font-size="10">{_label(t)}</text>')
    for t in _ticks(f.y0, f.y1):
        y = _fmt(f.py(t))
        parts.append(f'<line x1="{f.left - 4}" y1="{y}" x2="{f.left}" y2="{y}" stroke="#333"/>')
        parts.append(f'<text x="{f.left - 6}" y="{y}" text-anchor="end" dominant-baseline="middle" '
                     f'font-size="10">{_label(t)}</text>')
    return parts


def _document(parts: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">')
    return "\n".join([head, f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>', *parts, "</svg>"]) + "\n"


def line_chart(series: dict, *, title="", xlabel="", ylabel="", points: dict | None = None,
               hlines: dict | None = None, step: bool = False) -> str:
    """SVG line chart.

    Parameters
    ----------
    series : dict
        label -> list of (x, y); drawn as polylines (staircases if ``step``).
    points : dict, optional
        label -> list of (x, y); drawn as markers only.
    hlines : dict, optional
        label -> y; dashed horizontal reference lines.
    """
    points, hlines = points or {}, hlines or {}
    xs = [x for s in (*series.values(), *points.values()) for x, _ in s]
    ys = [y for s in (*series.values(), *points.values()) for _, y in s] + list(hlines.values())
    finite = [y for y in ys if math.isfinite(y)]
    f = _Frame((min(xs, default=0.0), max(xs, default=1.0)),
               (min(finite, default=0.0), max(finite, default=1.0)))
    parts = _axes(f, title, xlabel, ylabel)
    legend = []
    colour = iter(PALETTE * 4)
    for label, pts in series.items():
        c = next(colour)
        if step and pts:
            path = [pts[0]]
            for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
                path += [(x1, y0), (x1, y1)]
            pts = path
        coords = " ".join(f"{_fmt(f.px(x))},{_fmt(f.py(y))}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        legend.append((label, c, "line"))
    for label, pts in points.items():
        c = next(colour)
        for x, y in pts:
            parts.append(f'<circle cx="{_fmt(f.px(x))}" cy="{_fmt(f.py(y))}" r="3" fill="{c}"/>')
        legend.append((label, c, "dot"))
    for label, y in hlines.items():
        c = next(colour)
        yy = _fmt(f.py(y))
        parts.append(f'<line x1="{f.left}" y1="{yy}" x2="{f.left + f.w}" y2="{yy}" stroke="{c}" '
                     f'stroke-dasharray="6,4"/>')
        legend.append((label, c, "dash"))
    lx = WIDTH - MARGIN["right"] + 12
    for k, (label, c, kind) in enumerate(legend):
        y = MARGIN["top"] + 12 + 18 * k
        if kind == "dot":
            parts.append(f'<circle cx="{lx + 8}" cy="{y}" r="3" fill="{c}"/>')
        else:
            dash = ' stroke-dasharray="6,4"' if kind == "dash" else ""
            parts.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 16}" y2="{y}" stroke="{c}" stroke-width="1.5"{dash}/>')
        parts.append(f'<text x="{lx + 22}" y="{y}" dominant-baseline="middle" font-size="11">{escape(label)}</text>')
    return _document(parts)


def _heat_colour(t: float) -> str:
    # blue (good, < 1) through white (1) to red (worse)
    t = min(max(t, -1.0), 1.0)
    if t < 0:
        a = -t
        r, g, b = 255 - a * (255 - 33), 255 - a * (255 - 102), 255 - a * (255 - 172)
    else:
        r, g, b = 255 - t * (255 - 178), 255 - t * (255 - 24), 255 - t * (255 - 43)
    return f"#{int(round(r)):02x}{int(round(g)):02x}{int(round(b)):02x}"


def heatmap(values, xs, ys, *, title="", xlabel="", ylabel="", centre=1.0) -> str:
    """Annotated heatmap; ``values[i][j]`` belongs to row ``ys[i]``, column ``xs[j]``.

    Colour is centred at ``centre`` on a log scale (two-fold either way saturates).
    """
    f = _Frame((0, len(xs)), (0, len(ys)))
    parts = [
        f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{f.left + f.w / 2:.0f}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{f.top + f.h / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {f.top + f.h / 2:.0f})">{escape(ylabel)}</text>',
    ]
    cw, ch = f.w / max(len(xs), 1), f.h / max(len(ys), 1)
    for i, yv in enumerate(ys):
        top = f.py(i + 1)
        parts.append(f'<text x="{f.left - 6}" y="{_fmt(top + ch / 2)}" text-anchor="end" '
                     f'dominant-baseline="middle" font-size="10">{_label(yv)}</text>')
        for j, xv in enumerate(xs):
            v = values[i][j]
            t = math.log2(v / centre) if v > 0 and math.isfinite(v) else 1.0
            parts.append(f'<rect x="{_fmt(f.px(j))}" y="{_fmt(top)}" width="{_fmt(cw)}" height="{_fmt(ch)}" '
                         f'fill="{_heat_colour(t)}" stroke="#fff"/>')
            parts.append(f'<text x="{_fmt(f.px(j) + cw / 2)}" y="{_fmt(top + ch / 2)}" text-anchor="middle" '
                         f'dominant-baseline="middle" font-size="10">{v:.2f}</text>')
    for j, xv in enumerate(xs):
        parts.append(f'<text x="{_fmt(f.px(j) + cw / 2)}" y="{f.top + f.h + 16}" text-anchor="middle" '
                     f'font-size="10">{_label(xv)}</text>')
    return _document(parts)
