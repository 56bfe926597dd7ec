"""Minimal self-contained SVG line charts for run reports.

No plotting dependency: charts are assembled as SVG text directly, which
keeps report artifacts inspectable anywhere.  Supports multiple series,
a log-scale y axis, and a shaded vertical span (used to mark fine-tune
windows on objective curves).
"""

from __future__ import annotations

import dataclasses
import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd",
           "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


@dataclasses.dataclass
class Series:
    label: str
    xs: list
    ys: list


def _nice_step(span: float, target: int) -> float:
    raw = span / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            return mult * mag
    return 10.0 * mag


def linear_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    step = _nice_step(hi - lo, target)
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def decade_ticks(lo: float, hi: float) -> list[float]:
    lo_e = math.floor(math.log10(lo))
    hi_e = math.ceil(math.log10(hi))
    step = max(1, (hi_e - lo_e) // 8)
    return [10.0 ** e for e in range(lo_e, hi_e + 1, step)]


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.0e}"
    return f"{v:g}"


def line_chart(series: list[Series], title: str = "", xlabel: str = "",
               ylabel: str = "", log_y: bool = False,
               vspan: tuple[float, float] | None = None,
               size: tuple[int, int] = (640, 400)) -> str:
    """Render series as one SVG document string."""
    width, height = size
    ml, mr, mt, mb = 64, 16, 30, 44
    pw, ph = width - ml - mr, height - mt - mb

    pts = [(x, y) for s in series for x, y in zip(s.xs, s.ys)
           if not log_y or y > 0]
    if not pts:
        pts = [(0.0, 1.0), (1.0, 2.0)]
    x_lo = min(p[0] for p in pts)
    x_hi = max(p[0] for p in pts)
    y_lo = min(p[1] for p in pts)
    y_hi = max(p[1] for p in pts)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if log_y:
        y_ticks = decade_ticks(y_lo, y_hi)
        ly_lo, ly_hi = math.log10(y_ticks[0]), math.log10(y_ticks[-1])
        if ly_hi == ly_lo:
            ly_hi = ly_lo + 1.0

        def y_px(v):
            return mt + ph * (1.0 - (math.log10(v) - ly_lo) / (ly_hi - ly_lo))
    else:
        if y_hi == y_lo:
            y_hi = y_lo + 1.0
        pad = 0.05 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad
        y_ticks = linear_ticks(y_lo, y_hi)

        def y_px(v):
            return mt + ph * (1.0 - (v - y_lo) / (y_hi - y_lo))

    def x_px(v):
        return ml + pw * (v - x_lo) / (x_hi - x_lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
           f'fill="none" stroke="#333"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
                   f'font-size="13">{escape(title)}</text>')

    if vspan is not None:
        a = min(max(vspan[0], x_lo), x_hi)
        b = min(max(vspan[1], x_lo), x_hi)
        if b > a:
            out.append(f'<rect x="{x_px(a):.1f}" y="{mt}" '
                       f'width="{x_px(b) - x_px(a):.1f}" height="{ph}" '
                       f'fill="#ffd54f" fill-opacity="0.3"/>')

    for t in linear_ticks(x_lo, x_hi, 6):
        px = x_px(t)
        out.append(f'<line x1="{px:.1f}" y1="{mt}" x2="{px:.1f}" '
                   f'y2="{mt + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{px:.1f}" y="{mt + ph + 16}" '
                   f'text-anchor="middle">{_fmt(t)}</text>')
    for t in y_ticks:
        py = y_px(t)
        out.append(f'<line x1="{ml}" y1="{py:.1f}" x2="{ml + pw}" '
                   f'y2="{py:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 6}" y="{py + 4:.1f}" '
                   f'text-anchor="end">{_fmt(t)}</text>')

    if xlabel:
        out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" '
                   f'text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        cy = mt + ph / 2
        out.append(f'<text x="14" y="{cy:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {cy:.1f})">'
                   f'{escape(ylabel)}</text>')

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{x_px(x):.1f},{y_px(y):.1f}"
                          for x, y in zip(s.xs, s.ys)
                          if not log_y or y > 0)
        if coords:
            out.append(f'<polyline points="{coords}" fill="none" '
                       f'stroke="{color}" stroke-width="1.5"/>')

    ly = mt + 14
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<line x1="{ml + pw - 150}" y1="{ly}" '
                   f'x2="{ml + pw - 130}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{ml + pw - 124}" y="{ly + 4}">'
                   f'{escape(s.label)}</text>')
        ly += 16

    out.append("</svg>")
    return "\n".join(out)
