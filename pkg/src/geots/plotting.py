"""Minimal SVG line plots: truth vs predictions, one panel per model, with a zoom inset."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
WIDTH, PANEL_H, MARGIN = 900, 220, 50


def _polyline(x, y, x0, y0, w, h, xr, yr, color, width=1.2) -> str:
    (xa, xb), (ya, yb) = xr, yr
    sx = w / (xb - xa) if xb > xa else 0.0
    sy = h / (yb - ya) if yb > ya else 0.0
    pts = " ".join(f"{x0 + (xi - xa) * sx:.2f},{y0 + h - (yi - ya) * sy:.2f}"
                   for xi, yi in zip(x, y) if np.isfinite(yi))
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>'


def _range(*arrays) -> tuple[float, float]:
    v = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays])
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def comparison_svg(path: str | Path, epochs, truth, predictions: dict[str, Sequence[float]],
                   title: str = "", zoom: int | None = None, unit: str = "") -> None:
    """Write one panel per model (truth in black); ``zoom`` points from the start get an inset."""
    epochs = np.asarray(epochs, dtype=float)
    truth = np.asarray(truth, dtype=float)
    names = list(predictions)
    height = MARGIN + PANEL_H * max(len(names), 1) + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{height}" fill="white"/>',
           f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    xr = (float(epochs[0]), float(epochs[-1])) if epochs.size > 1 else (0.0, 1.0)
    for k, name in enumerate(names):
        pred = np.asarray(predictions[name], dtype=float)
        x0, y0 = MARGIN + 10, MARGIN + k * PANEL_H
        w, h = WIDTH - 2 * MARGIN - 10, PANEL_H - 40
        yr = _range(truth, pred)
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#444"/>')
        out.append(f'<text x="{x0 - 5}" y="{y0 + 10}" text-anchor="end">{yr[1]:.3g}</text>')
        out.append(f'<text x="{x0 - 5}" y="{y0 + h}" text-anchor="end">{yr[0]:.3g}</text>')
        out.append(f'<text x="{x0}" y="{y0 + h + 14}">{xr[0]:.6g}</text>')
        out.append(f'<text x="{x0 + w}" y="{y0 + h + 14}" text-anchor="end">{xr[1]:.6g}</text>')
        if unit:
            out.append(f'<text x="{x0 - 40}" y="{y0 + h / 2:.0f}">{escape(unit)}</text>')
        out.append(_polyline(epochs, truth, x0, y0, w, h, xr, yr, "#000000"))
        out.append(_polyline(epochs, pred, x0, y0, w, h, xr, yr, color))
        out.append(f'<text x="{x0 + 8}" y="{y0 + 14}" fill="#000">truth</text>')
        out.append(f'<text x="{x0 + 50}" y="{y0 + 14}" fill="{color}">{escape(name)}</text>')
        if zoom and 2 <= zoom < epochs.size:
            zx = (float(epochs[0]), float(epochs[zoom - 1]))
            zr = _range(truth[:zoom], pred[:zoom])
            iw, ih = w * 0.3, h * 0.45
            ix, iy = x0 + w - iw - 6, y0 + 6
            out.append(f'<rect x="{ix:.2f}" y="{iy:.2f}" width="{iw:.2f}" height="{ih:.2f}" '
                       f'fill="#f7f7f7" stroke="#888" stroke-dasharray="3,2"/>')
            out.append(_polyline(epochs[:zoom], truth[:zoom], ix, iy, iw, ih, zx, zr, "#000000", 1.0))
            out.append(_polyline(epochs[:zoom], pred[:zoom], ix, iy, iw, ih, zx, zr, color, 1.0))
            out.append(f'<text x="{ix + 4:.2f}" y="{iy + 12:.2f}" fill="#555">zoom: first {zoom}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
