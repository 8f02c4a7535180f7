"""Minimal static line plots written directly as SVG text.

Output depends only on the data, so reruns give byte-identical files.
"""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["line_plot"]

_W, _H = 640, 420
_LEFT, _RIGHT, _TOP, _BOTTOM = 72, 24, 36, 56
_COLORS = ("#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad", "#d68910", "#555555")


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    return [first + i * step for i in range(int((hi - first) / step + 1e-9) + 1)]


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_plot(path, series, xlabel: str, ylabel: str, title: str = "",
              logy: bool = False, markers: bool = False) -> None:
    """Write an SVG with one polyline per ``(label, x, y)`` series.

    With ``logy`` the y axis shows log10 of the data and non-positive points
    are dropped (a zero key rate has no logarithm).
    """
    prepared = []
    for label, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logy:
            ok &= y > 0
            y = np.where(ok, np.log10(np.where(y > 0, y, 1.0)), np.nan)
        prepared.append((label, x[ok], y[ok]))
    xs = np.concatenate([p[1] for p in prepared]) if prepared else np.array([])
    ys = np.concatenate([p[2] for p in prepared]) if prepared else np.array([])
    if xs.size == 0:
        xs, ys = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def px(v):
        return _LEFT + (v - x0) / (x1 - x0) * pw

    def py(v):
        return _TOP + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
           f'<rect x="{_LEFT}" y="{_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        if x0 <= t <= x1:
            out.append(f'<line x1="{px(t):.2f}" y1="{_TOP + ph}" x2="{px(t):.2f}" '
                       f'y2="{_TOP + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{px(t):.2f}" y="{_TOP + ph + 18}" '
                       f'text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        if y0 <= t <= y1:
            label = f"1e{_fmt(t)}" if logy else _fmt(t)
            out.append(f'<line x1="{_LEFT - 5}" y1="{py(t):.2f}" x2="{_LEFT}" '
                       f'y2="{py(t):.2f}" stroke="black"/>')
            out.append(f'<text x="{_LEFT - 8}" y="{py(t) + 4:.2f}" '
                       f'text-anchor="end">{label}</text>')
    out.append(f'<text x="{_LEFT + pw / 2:.1f}" y="{_H - 14}" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{_TOP + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_TOP + ph / 2:.1f})">'
               f'{escape(("log10 " if logy else "") + ylabel)}</text>')
    if title:
        out.append(f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" '
                   f'font-size="14">{escape(title)}</text>')
    for i, (label, x, y) in enumerate(prepared):
        color = _COLORS[i % len(_COLORS)]
        if x.size:
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                       f'points="{pts}"/>')
            if markers:
                out.extend(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="2.5" '
                           f'fill="{color}"/>' for a, b in zip(x, y))
        ly = _TOP + 16 + 16 * i
        out.append(f'<line x1="{_LEFT + pw - 150}" y1="{ly - 4}" x2="{_LEFT + pw - 130}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_LEFT + pw - 124}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
