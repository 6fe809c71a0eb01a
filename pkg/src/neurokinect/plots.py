"""Minimal hand-written SVG line plots (no plotting dependency)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H, MARGIN = 640, 360, 50


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    return np.linspace(lo, hi, n)


def _range(v: np.ndarray) -> tuple[float, float]:
    lo, hi = float(np.nanmin(v)), float(np.nanmax(v))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _polyline(xs, ys, color: str) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>'


def line_plot(path: str | Path, x, series: Mapping[str, np.ndarray], title: str = "",
              xlabel: str = "", ylabel: str = "") -> None:
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    x0, x1 = float(x.min()), float(x.max()) if x.size > 1 else float(x.min()) + 1
    y0, y1 = _range(np.concatenate(list(ys.values())))
    sx = lambda v: MARGIN + (v - x0) / (x1 - x0 or 1) * (W - 2 * MARGIN)
    sy = lambda v: H - MARGIN - (v - y0) / (y1 - y0) * (H - 2 * MARGIN)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
             f'<line x1="{MARGIN}" y1="{H - MARGIN}" x2="{W - MARGIN}" y2="{H - MARGIN}" stroke="black"/>',
             f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{H - MARGIN}" stroke="black"/>']
    for t in _ticks(x0, x1):
        parts.append(f'<text x="{sx(t):.1f}" y="{H - MARGIN + 15}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        parts.append(f'<text x="{MARGIN - 5}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    parts.append(f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(f'<text x="14" y="{H / 2}" text-anchor="middle" transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>')
    for k, (name, y) in enumerate(ys.items()):
        color = COLORS[k % len(COLORS)]
        parts.append(_polyline(sx(x), sy(y), color))
        parts.append(f'<text x="{W - MARGIN + 4}" y="{MARGIN + 14 * k}" fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def trajectory_plot(path: str | Path, measured: np.ndarray, predicted: np.ndarray, title: str = "") -> None:
    """Oblique projection of two 3-D paths (x right, z up, y receding)."""
    def project(p):
        return p[:, 0] + 0.5 * p[:, 1], p[:, 2] + 0.35 * p[:, 1]

    mx, mz = project(np.asarray(measured, float))
    px, pz = project(np.asarray(predicted, float))
    x0, x1 = _range(np.concatenate([mx, px]))
    y0, y1 = _range(np.concatenate([mz, pz]))
    sx = lambda v: MARGIN + (v - x0) / (x1 - x0) * (W - 2 * MARGIN)
    sy = lambda v: H - MARGIN - (v - y0) / (y1 - y0) * (H - 2 * MARGIN)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
             _polyline(sx(mx), sy(mz), COLORS[0]),
             _polyline(sx(px), sy(pz), COLORS[1]),
             f'<text x="{W - MARGIN}" y="{MARGIN}" fill="{COLORS[0]}" text-anchor="end">measured</text>',
             f'<text x="{W - MARGIN}" y="{MARGIN + 14}" fill="{COLORS[1]}" text-anchor="end">predicted</text>',
             "</svg>"]
    Path(path).write_text("\n".join(parts) + "\n")
