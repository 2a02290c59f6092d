"""Tiny dependency-free SVG line and scatter plots."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=20, top=40, bottom=55)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


@dataclass
class Series:
    x: Sequence[float]
    y: Sequence[float]
    label: str = ""
    style: str = "line"  # "line" | "points"
    band: tuple[Sequence[float], Sequence[float]] | None = None  # lower, upper
    color: str | None = None


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def _finite_range(values: list[np.ndarray]) -> tuple[float, float]:
    cat = np.concatenate([v[np.isfinite(v)] for v in values]) if values else np.array([])
    if cat.size == 0:
        return 0.0, 1.0
    lo, hi = float(cat.min()), float(cat.max())
    if hi == lo:
        pad = abs(lo) * 0.05 or 0.5
        return lo - pad, hi + pad
    return lo, hi


def render(series: Sequence[Series], title: str = "", xlabel: str = "", ylabel: str = "",
           logy: bool = False) -> str:
    """SVG text for the given series on shared axes."""
    tf = (lambda v: np.log10(np.where(np.asarray(v, float) > 0, v, np.nan))) if logy else (
        lambda v: np.asarray(v, float))
    xs = [np.asarray(s.x, float) for s in series]
    ys = [tf(s.y) for s in series]
    bands = [tuple(tf(b) for b in s.band) for s in series if s.band is not None]
    x0, x1 = _finite_range(xs)
    y0, y1 = _finite_range(ys + [b for pair in bands for b in pair])

    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - left - MARGIN["right"]
    ph = HEIGHT - top - MARGIN["bottom"]

    def px(v):
        return left + (np.asarray(v, float) - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (np.asarray(v, float) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(x0, x1):
        X = float(px(t))
        out.append(f'<line x1="{X:.2f}" y1="{top + ph}" x2="{X:.2f}" y2="{top + ph + 5}" stroke="#444"/>')
        out.append(f'<text x="{X:.2f}" y="{top + ph + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        Y = float(py(t))
        label = _fmt(10**t) if logy else _fmt(t)
        out.append(f'<line x1="{left - 5}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" stroke="#444"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.2f}" text-anchor="end">{escape(label)}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(
            f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
            f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel + (" (log)" if logy else ""))}</text>'
        )

    for i, (s, x, y) in enumerate(zip(series, xs, ys)):
        color = s.color or PALETTE[i % len(PALETTE)]
        if s.band is not None:
            lo, hi = (tf(b) for b in s.band)
            ok = np.isfinite(lo) & np.isfinite(hi)
            pts = [f"{a:.2f},{b:.2f}" for a, b in zip(px(x[ok]), py(hi[ok]))]
            pts += [f"{a:.2f},{b:.2f}" for a, b in zip(px(x[ok])[::-1], py(lo[ok])[::-1])]
            if pts:
                out.append(f'<polygon points="{" ".join(pts)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        ok = np.isfinite(x) & np.isfinite(y)
        X, Y = px(x[ok]), py(y[ok])
        if s.style == "points":
            for a, b in zip(X, Y):
                out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{color}"/>')
        elif X.size:
            d = "M" + " L".join(f"{a:.2f},{b:.2f}" for a, b in zip(X, Y))
            out.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        if s.label:
            ly = top + 16 + 16 * i
            out.append(f'<rect x="{left + pw - 150}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
            out.append(f'<text x="{left + pw - 135}" y="{ly}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
