"""Minimal self-contained SVG line plots."""
from __future__ import annotations

import math
import os
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
W, H = 720, 480
LEFT, RIGHT, TOP, BOTTOM = 80, 170, 40, 60


def _nice_ticks(lo, hi, n=6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _log_ticks(lo, hi):
    a, b = math.floor(lo), math.ceil(hi)
    step = max(1, (b - a) // 8)
    return [float(k) for k in range(a, b + 1, step) if lo - 1e-9 <= k <= hi + 1e-9]


def _fmt(v):
    return f"{v:.3g}"


def line_plot(path, x, series, xlabel="", ylabel="", title="", logx=False, logy=False):
    """Write ``series`` (label -> y array) against ``x`` to ``path``."""
    x = np.asarray(x, dtype=float)
    tx = np.log10(np.where(x > 0, x, np.nan)) if logx else x
    ys = {}
    for lab, y in series.items():
        y = np.asarray(y, dtype=float)
        ys[lab] = np.log10(np.where(y > 0, y, np.nan)) if logy else y
    allx = tx[np.isfinite(tx)]
    ally = np.concatenate([v[np.isfinite(v)] for v in ys.values()] or [np.zeros(0)])
    if allx.size == 0:
        allx = np.array([0.0, 1.0])
    if ally.size == 0:
        ally = np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.04 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    sx = lambda v: LEFT + (v - x0) / (x1 - x0) * pw
    sy = lambda v: TOP + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    xt = _log_ticks(x0, x1) if logx else _nice_ticks(x0, x1)
    yt = _log_ticks(y0, y1) if logy else _nice_ticks(y0, y1)
    for t in xt:
        if x0 <= t <= x1:
            px = sx(t)
            lab = f"1e{int(t)}" if logx else _fmt(t)
            out.append(f'<line x1="{px:.2f}" y1="{TOP + ph}" x2="{px:.2f}" y2="{TOP + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{px:.2f}" y="{TOP + ph + 18}" text-anchor="middle">{lab}</text>')
    for t in yt:
        if y0 <= t <= y1:
            py = sy(t)
            lab = f"1e{int(t)}" if logy else _fmt(t)
            out.append(f'<line x1="{LEFT - 5}" y1="{py:.2f}" x2="{LEFT}" y2="{py:.2f}" stroke="black"/>')
            out.append(f'<text x="{LEFT - 8}" y="{py + 4:.2f}" text-anchor="end">{lab}</text>')
    for i, (lab, y) in enumerate(ys.items()):
        color = PALETTE[i % len(PALETTE)]
        segs, cur = [], []
        for xv, yv in zip(tx, y):
            if np.isfinite(xv) and np.isfinite(yv):
                cur.append(f"{sx(xv):.2f},{sy(yv):.2f}")
            elif cur:
                segs.append(cur)
                cur = []
        if cur:
            segs.append(cur)
        for seg in segs:
            if len(seg) == 1:
                cx, cy = seg[0].split(",")
                out.append(f'<circle cx="{cx}" cy="{cy}" r="2" fill="{color}"/>')
            else:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.6" '
                           f'points="{" ".join(seg)}"/>')
        ly = TOP + 14 + 18 * i
        out.append(f'<line x1="{W - RIGHT + 12}" y1="{ly}" x2="{W - RIGHT + 36}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - RIGHT + 42}" y="{ly + 4}">{escape(lab)}</text>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{H - 15}" text-anchor="middle">'
               f'{escape(xlabel + (" (log)" if logx else ""))}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2})">{escape(ylabel + (" (log)" if logy else ""))}</text>')
    if title:
        out.append(f'<text x="{LEFT + pw / 2}" y="{TOP - 14}" text-anchor="middle" '
                   f'font-size="14">{escape(title)}</text>')
    out.append("</svg>\n")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out))
    os.replace(tmp, path)
