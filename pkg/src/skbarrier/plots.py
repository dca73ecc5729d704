"""Static SVG figures: polar barrier plot and overlaid radial CDFs."""
import math

import numpy as np

from ._core import NORMAL

SIZE = 400
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _f(v):
    return f"{v:.3f}"


def _open(w, h, title):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
            f"<title>{title}</title>", f'<rect width="{w}" height="{h}" fill="white"/>']


def _arc(cx, cy, r, a0, a1):
    """Path for the arc from angle a0 to a1 (radians, counter-clockwise, y up)."""
    if a1 - a0 >= 2 * math.pi - 1e-9:
        return f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}"'
    x0, y0 = cx + r * math.cos(a0), cy - r * math.sin(a0)
    x1, y1 = cx + r * math.cos(a1), cy - r * math.sin(a1)
    large = 1 if a1 - a0 > math.pi else 0
    return f'<path d="M {_f(x0)} {_f(y0)} A {_f(r)} {_f(r)} 0 {large} 0 {_f(x1)} {_f(y1)}"'


def stop_arcs(orientation, beta):
    """Angular intervals (relative to the start direction) where a ring stops paths."""
    beta = float(np.clip(beta, -1.0, 1.0))
    th = math.acos(beta)
    if orientation == NORMAL:
        return [(-th, th)] if th > 0 else []
    return [(th, 2 * math.pi - th)] if th < math.pi else []


def barrier_svg(barrier, title="barrier"):
    """Rings drawn faint, stopping arcs bold; the start direction points right."""
    c = SIZE / 2
    scale = (SIZE / 2 - 20) / barrier.universe
    out = _open(SIZE, SIZE, title)
    out.append(f'<circle cx="{_f(c)}" cy="{_f(c)}" r="{_f(barrier.universe * scale)}" fill="none" '
               'stroke="black" stroke-dasharray="4 3"/>')
    out.append(f'<line x1="{_f(c)}" y1="{_f(c)}" x2="{_f(SIZE - 10)}" y2="{_f(c)}" stroke="#888"/>')
    for r, b in zip(barrier.radii, barrier.thresholds):
        rr = r * scale
        out.append(f'<circle cx="{_f(c)}" cy="{_f(c)}" r="{_f(rr)}" fill="none" stroke="#ccc"/>')
        for a0, a1 in stop_arcs(barrier.orientation, b):
            out.append(_arc(c, c, rr, a0, a1) + ' fill="none" stroke="#1f77b4" stroke-width="3"/>')
    out.append(f'<text x="10" y="20" font-size="12">{barrier.orientation_name}, R={_f(barrier.universe)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cdf_svg(laws, labels, title="radial laws"):
    """Step CDFs of radial measures on a common axis."""
    w, h, pad = 480, 320, 40
    top = max(max(m.max_radius() for m in laws), 1e-12) * 1.05
    X = lambda r: pad + (w - 2 * pad) * r / top
    Y = lambda p: h - pad - (h - 2 * pad) * p
    out = _open(w, h, title)
    out.append(f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>')
    out.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>')
    for k, (m, lab) in enumerate(zip(laws, labels)):
        col = PALETTE[k % len(PALETTE)]
        pts, p = [(0.0, 0.0)], 0.0
        for r, wt in zip(m.radii, m.weights / m.mass):
            pts.append((r, p))
            p += wt
            pts.append((r, p))
        pts.append((top, p))
        poly = " ".join(f"{_f(X(r))},{_f(Y(q))}" for r, q in pts)
        out.append(f'<polyline points="{poly}" fill="none" stroke="{col}" stroke-width="2"/>')
        out.append(f'<text x="{w - pad - 120}" y="{pad + 16 * k}" fill="{col}" font-size="12">{lab}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
