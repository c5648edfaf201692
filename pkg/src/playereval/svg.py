"""Minimal deterministic SVG rendering for funnel plots and dendrograms.

Coordinates are printed with fixed precision and nothing time- or
environment-dependent is embedded, so identical inputs give identical bytes.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .profiling import Dendrogram, FunnelGeometry

WIDTH, HEIGHT, MARGIN = 640, 420, 50
_DASHES = ("6,3", "3,3", "1,2")


def _f(x: float) -> str:
    return f"{x:.2f}"


def _header(title: str) -> list:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" font-size="13">'
        f'{escape(title)}</text>',
    ]


def funnel_svg(geom: FunnelGeometry, title: str = "Funnel plot") -> str:
    """Precision on the x-axis, estimate on the y-axis, dashed control limits."""
    lines = _header(title)
    if not geom.points:
        lines.append("</svg>")
        return "\n".join(lines) + "\n"
    precs = np.array([p.precision for p in geom.points])
    ests = np.array([p.estimate for p in geom.points])
    x_lo, x_hi = float(precs.min()), float(precs.max())
    if x_hi == x_lo:
        x_lo, x_hi = x_lo * 0.9, x_hi * 1.1
    y_max = float(np.max(np.abs(ests)))
    for c in geom.levels:
        y_max = max(y_max, float(np.max(np.abs(geom.curves[c][:, 2]))))
    y_max = y_max * 1.05 or 1.0

    def sx(v):
        return MARGIN + (v - x_lo) / (x_hi - x_lo) * (WIDTH - 2 * MARGIN)

    def sy(v):
        return HEIGHT / 2 - v / y_max * (HEIGHT / 2 - MARGIN)

    lines.append(f'<line x1="{MARGIN}" y1="{_f(sy(0))}" x2="{WIDTH - MARGIN}" y2="{_f(sy(0))}" '
                 'stroke="black"/>')
    lines.append(f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" '
                 'stroke="black"/>')
    lines.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle">'
                 'precision (1/se)</text>')
    for i, c in enumerate(geom.levels):
        curve = geom.curves[c]
        dash = _DASHES[i % len(_DASHES)]
        for col in (1, 2):
            pts = " ".join(f"{_f(sx(x))},{_f(sy(y))}" for x, y in zip(curve[:, 0], curve[:, col]))
            lines.append(f'<polyline points="{pts}" fill="none" stroke="grey" '
                         f'stroke-dasharray="{dash}"><title>{c:g}</title></polyline>')
    for p in geom.points:
        colour = "firebrick" if p.flags else "steelblue"
        lines.append(f'<circle cx="{_f(sx(p.precision))}" cy="{_f(sy(p.estimate))}" r="3.5" '
                     f'fill="{colour}"><title>{escape(p.label)}</title></circle>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def dendrogram_svg(tree: Dendrogram, title: str = "Propensity-profile dendrogram") -> str:
    """Leaves along the x-axis in merge order, merge height on the y-axis."""
    lines = _header(title)
    m = tree.m
    order = _leaf_order(tree)
    xpos = {leaf: MARGIN + (i + 0.5) * (WIDTH - 2 * MARGIN) / m for i, leaf in enumerate(order)}
    hpos = {leaf: 0.0 for leaf in range(m)}
    top = max((g.height for g in tree.merges), default=0.0) or 1.0

    def sy(h):
        return HEIGHT - MARGIN - h / top * (HEIGHT - 2 * MARGIN - 20)

    for k, g in enumerate(tree.merges):
        node = m + k
        xl, xr = xpos[g.left], xpos[g.right]
        y = sy(g.height)
        lines.append(f'<polyline points="{_f(xl)},{_f(sy(hpos[g.left]))} {_f(xl)},{_f(y)} '
                     f'{_f(xr)},{_f(y)} {_f(xr)},{_f(sy(hpos[g.right]))}" fill="none" '
                     'stroke="black"/>')
        xpos[node] = (xl + xr) / 2
        hpos[node] = g.height
    for leaf in order:
        lines.append(f'<text x="{_f(xpos[leaf])}" y="{HEIGHT - MARGIN + 14}" '
                     f'text-anchor="middle">{escape(tree.labels[leaf])}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _leaf_order(tree: Dendrogram) -> list:
    m = tree.m
    if not tree.merges:
        return list(range(m))
    children = {m + k: (g.left, g.right) for k, g in enumerate(tree.merges)}
    out, stack = [], [m + len(tree.merges) - 1]
    while stack:
        node = stack.pop()
        if node < m:
            out.append(node)
        else:
            left, right = children[node]
            stack.extend([right, left])
    return out
