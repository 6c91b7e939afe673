"""Minimal SVG line plots for loss and energy curves (no plotting dependency)."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v):
    return f"{v:.3g}"


def line_plot(series: dict, title="", xlabel="", ylabel="", logy=False, width=480, height=320) -> str:
    """``series`` maps a label to (x, y) arrays. Non-finite points are dropped."""
    pad_l, pad_r, pad_t, pad_b = 64, 16, 28, 40
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b
    cleaned = {}
    for name, (x, y) in series.items():
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        ok = np.isfinite(x) & np.isfinite(y)
        if logy:
            ok &= y > 0
        if ok.any():
            cleaned[name] = (x[ok], np.log10(y[ok]) if logy else y[ok])
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>']
    if cleaned:
        xs = np.concatenate([v[0] for v in cleaned.values()])
        ys = np.concatenate([v[1] for v in cleaned.values()])
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        if x1 == x0:
            x1 = x0 + 1.0
        if y1 == y0:
            y0, y1 = y0 - 0.5, y1 + 0.5

        def sx(v):
            return pad_l + (v - x0) / (x1 - x0) * pw

        def sy(v):
            return pad_t + (1.0 - (v - y0) / (y1 - y0)) * ph

        out.append(f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
        for i in range(5):
            yv = y0 + (y1 - y0) * i / 4
            label = _fmt(10 ** yv) if logy else _fmt(yv)
            out.append(f'<text x="{pad_l - 4}" y="{sy(yv) + 4:.1f}" text-anchor="end">{label}</text>')
            xv = x0 + (x1 - x0) * i / 4
            out.append(f'<text x="{sx(xv):.1f}" y="{pad_t + ph + 14}" text-anchor="middle">{_fmt(xv)}</text>')
        for j, (name, (x, y)) in enumerate(cleaned.items()):
            color = PALETTE[j % len(PALETTE)]
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
            out.append(f'<text x="{pad_l + 8}" y="{pad_t + 14 + 13 * j}" fill="{color}">{escape(name)}</text>')
    else:
        out.append(f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle">no finite data</text>')
    out.append(f'<text x="{pad_l + pw / 2}" y="{height - 6}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="12" y="{pad_t + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 12 {pad_t + ph / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

