"""Minimal static SVG line charts (fixed 800 x 600 viewBox).

A figure is a grid of panels; each panel holds polylines and optional
filled bands.  Output depends only on the data, so reruns are
byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 600
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


@dataclass
class Panel:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    lines: list = field(default_factory=list)
    bands: list = field(default_factory=list)

    def line(self, x, y, color=None, dash=False, width=1.5, label=None):
        self.lines.append((np.asarray(x, float), np.asarray(y, float), color, dash, width, label))
        return self

    def band(self, x, lo, hi, color=None, opacity=0.2):
        self.bands.append((np.asarray(x, float), np.asarray(lo, float), np.asarray(hi, float), color, opacity))
        return self

    def limits(self):
        xs = [a for l in self.lines for a in (l[0],)] + [b[0] for b in self.bands]
        ys = [l[1] for l in self.lines] + [b[1] for b in self.bands] + [b[2] for b in self.bands]
        if not xs:
            return (0.0, 1.0), (0.0, 1.0)

        def rng(arrs):
            v = np.concatenate([a[np.isfinite(a)] for a in arrs]) if arrs else np.zeros(1)
            if v.size == 0:
                return 0.0, 1.0
            lo, hi = float(v.min()), float(v.max())
            if hi - lo < 1e-12:
                lo, hi = lo - 0.5, hi + 0.5
            pad = 0.04 * (hi - lo)
            return lo - pad, hi + pad
        return rng(xs), rng(ys)


def _fmt(v):
    return f"{v:.2f}"


def _points(x, y, box, lim):
    (x0, y0, w, h), ((a, b), (c, d)) = box, lim
    ok = np.isfinite(x) & np.isfinite(y)
    px = x0 + (x[ok] - a) / (b - a) * w
    py = y0 + h - (y[ok] - c) / (d - c) * h
    return " ".join(f"{_fmt(u)},{_fmt(v)}" for u, v in zip(px, py))


def _ticks(lo, hi, k=4):
    return np.linspace(lo, hi, k + 1)


def render(panels, rows=1, cols=1, title=""):
    """Return the SVG document for a ``rows x cols`` grid of panels."""
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    top = 30 if title else 8
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    cw, ch = WIDTH / cols, (HEIGHT - top) / rows
    small = rows * cols > 4
    fs = 7 if small else 11
    for k, p in enumerate(panels):
        r, c = divmod(k, cols)
        ml, mb, mt, mr = (22, 14, 12, 6) if small else (55, 40, 24, 15)
        box = (c * cw + ml, top + r * ch + mt, cw - ml - mr, ch - mt - mb)
        lim = p.limits()
        x0, y0, w, h = box
        out.append(f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(w)}" height="{_fmt(h)}" '
                   f'fill="none" stroke="#444" stroke-width="0.8"/>')
        if p.title:
            out.append(f'<text x="{_fmt(x0 + w / 2)}" y="{_fmt(y0 - 3)}" text-anchor="middle" '
                       f'font-size="{fs}">{escape(p.title)}</text>')
        for tv in _ticks(*lim[0]):
            px = x0 + (tv - lim[0][0]) / (lim[0][1] - lim[0][0]) * w
            out.append(f'<text x="{_fmt(px)}" y="{_fmt(y0 + h + fs + 1)}" text-anchor="middle" '
                       f'font-size="{fs - 1}">{tv:.3g}</text>')
        for tv in _ticks(*lim[1]):
            py = y0 + h - (tv - lim[1][0]) / (lim[1][1] - lim[1][0]) * h
            out.append(f'<text x="{_fmt(x0 - 2)}" y="{_fmt(py + 3)}" text-anchor="end" '
                       f'font-size="{fs - 1}">{tv:.3g}</text>')
        if p.xlabel and not small:
            out.append(f'<text x="{_fmt(x0 + w / 2)}" y="{_fmt(y0 + h + 32)}" text-anchor="middle" '
                       f'font-size="{fs}">{escape(p.xlabel)}</text>')
        if p.ylabel and not small:
            out.append(f'<text x="{_fmt(x0 - 42)}" y="{_fmt(y0 + h / 2)}" text-anchor="middle" '
                       f'font-size="{fs}" transform="rotate(-90 {_fmt(x0 - 42)} {_fmt(y0 + h / 2)})">'
                       f'{escape(p.ylabel)}</text>')
        for i, (x, lo, hi, color, op) in enumerate(p.bands):
            color = color or PALETTE[i % len(PALETTE)]
            pts = _points(np.concatenate([x, x[::-1]]), np.concatenate([lo, hi[::-1]]), box, lim)
            out.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="{op}" stroke="none"/>')
        for i, (x, y, color, dash, width, label) in enumerate(p.lines):
            color = color or PALETTE[i % len(PALETTE)]
            extra = ' stroke-dasharray="5,3"' if dash else ""
            out.append(f'<polyline points="{_points(x, y, box, lim)}" fill="none" stroke="{color}" '
                       f'stroke-width="{width}"{extra}/>')
        labels = [(l[2] or PALETTE[i % len(PALETTE)], l[5]) for i, l in enumerate(p.lines) if l[5]]
        for i, (color, label) in enumerate(labels):
            ly = y0 + 10 + i * (fs + 3)
            out.append(f'<line x1="{_fmt(x0 + w - 70)}" y1="{_fmt(ly - 3)}" x2="{_fmt(x0 + w - 55)}" '
                       f'y2="{_fmt(ly - 3)}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{_fmt(x0 + w - 52)}" y="{_fmt(ly)}" font-size="{fs - 1}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
