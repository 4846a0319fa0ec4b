"""Deterministic semi-log SVG line charts of metrics files.

The SVG is written by hand with fixed-precision coordinates so identical
inputs give byte-identical files.
"""

import math
from xml.sax.saxutils import escape

FLOOR = 1e-16
WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 30, 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
X_FIELDS = {"comms": "communications", "time": "time (ms)", "round": "round", "epoch_equiv": "epochs"}
_X_KEY = {"time": "time_ms"}


def _num(v):
    return f"{v:.2f}"


def render_svg(series, x="comms", y="gap_normalized", title=None):
    """``series`` is a list of ``(label, rows)``; returns the SVG text."""
    if x not in X_FIELDS:
        raise ValueError(f"x must be one of {sorted(X_FIELDS)}")
    xkey = _X_KEY.get(x, x)
    clamped = False
    pts = []
    for label, rows in series:
        line = []
        for row in rows:
            val = float(row[y])
            if val < FLOOR:
                val = FLOOR
                clamped = True
            line.append((float(row[xkey]), math.log10(val)))
        pts.append((label, line))
    xs = [p[0] for _, line in pts for p in line] or [0.0, 1.0]
    ys = [p[1] for _, line in pts for p in line] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x1 = x0 + 1.0
    y0, y1 = math.floor(min(ys)), math.ceil(max(ys))
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(v):
        return LEFT + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return TOP + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    step = max(1, (y1 - y0 + 7) // 8)
    for e in range(y0, y1 + 1, step):
        yy = _num(sy(e))
        out.append(f'<line x1="{LEFT}" y1="{yy}" x2="{LEFT + pw}" y2="{yy}" stroke="#dddddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{yy}" font-size="11" text-anchor="end" dominant-baseline="middle">1e{e}</text>')
    for k in range(5):
        v = x0 + (x1 - x0) * k / 4
        xx = _num(sx(v))
        out.append(f'<text x="{xx}" y="{TOP + ph + 16}" font-size="11" text-anchor="middle">{v:.6g}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 26}" font-size="12" text-anchor="middle">{escape(X_FIELDS[x])}</text>')
    out.append(f'<text x="16" y="{TOP + ph / 2:.2f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {TOP + ph / 2:.2f})">{escape(y)} (log scale)</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="18" font-size="13" text-anchor="middle">{escape(title)}</text>')
    for i, (label, line) in enumerate(pts):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{_num(sx(a))},{_num(sy(b))}" for a, b in line)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = TOP + 14 + 14 * i
        out.append(f'<line x1="{LEFT + pw - 150}" y1="{ly}" x2="{LEFT + pw - 130}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw - 125}" y="{ly}" font-size="11" dominant-baseline="middle">{escape(label)}</text>')
    if clamped:
        out.append(f'<text x="{LEFT}" y="{HEIGHT - 8}" font-size="10">* values below 1e-16 (including exact zeros) are drawn at 1e-16</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
