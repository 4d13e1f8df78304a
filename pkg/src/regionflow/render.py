"""Deterministic SVG choropleth rendering with a seeded categorical palette."""

from __future__ import annotations

import colorsys
from xml.sax.saxutils import escape

import numpy as np

from .errors import ValidationError
from .graph import Polygon

_GOLDEN = 0.618033988749895


def categorical_palette(count: int, seed: int = 0) -> list[str]:
    """`count` well-spread hex colors; the seed rotates the hue wheel."""
    rng = np.random.default_rng(seed)
    start = float(rng.random())
    colors = []
    for i in range(count):
        hue = (start + i * _GOLDEN) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.55, 0.85)
        colors.append(f"#{round(r * 255):02x}{round(g * 255):02x}{round(b * 255):02x}")
    return colors


def render_choropleth(node_ids: list[str], geometries: list[Polygon],
                      communities: dict[str, int], palette_seed: int = 0,
                      width: int = 800) -> str:
    """One filled path per polygon, colored by community, with a legend.

    Output bytes are deterministic for identical inputs. Every node in
    `communities` must have a geometry and vice versa.
    """
    missing = [nid for nid in communities if nid not in set(node_ids)]
    if missing:
        raise ValidationError(f"nodes without geometry: {missing[:5]}")
    unlabeled = [nid for nid in node_ids if nid not in communities]
    if unlabeled:
        raise ValidationError(f"geometries without a community label: {unlabeled[:5]}")

    xs, ys = [], []
    for poly in geometries:
        for part in poly:
            for ring in part:
                for x, y in ring:
                    xs.append(x)
                    ys.append(y)
    if not xs:
        raise ValidationError("no coordinates to render")
    min_x, max_x = min(xs), max(xs)
    min_y, max_y = min(ys), max(ys)
    span_x = max(max_x - min_x, 1e-12)
    span_y = max(max_y - min_y, 1e-12)
    pad = 10.0
    draw = width - 2 * pad
    scale = draw / span_x
    height = span_y * scale + 2 * pad

    def to_canvas(x, y):
        return (pad + (x - min_x) * scale, pad + (max_y - y) * scale)  # y flips

    labels = sorted(set(communities.values()))
    palette = dict(zip(labels, categorical_palette(len(labels), palette_seed)))

    legend_height = 18 * len(labels) + 8
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width:.0f}" height="{height + legend_height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height + legend_height:.0f}">',
    ]
    for nid, poly in zip(node_ids, geometries):
        pieces = []
        for part in poly:
            for ring in part:
                points = [to_canvas(x, y) for x, y in ring]
                coords = " L ".join(f"{x:.2f},{y:.2f}" for x, y in points)
                pieces.append(f"M {coords} Z")
        color = palette[communities[nid]]
        lines.append(f'<path d="{" ".join(pieces)}" fill="{color}" stroke="#333333" '
                     f'stroke-width="0.5" fill-rule="evenodd"><title>{escape(nid)}'
                     f'</title></path>')
    for row, label in enumerate(labels):
        y = height + 8 + row * 18
        lines.append(f'<rect x="{pad:.2f}" y="{y:.2f}" width="14" height="14" '
                     f'fill="{palette[label]}" stroke="#333333" stroke-width="0.5"/>')
        lines.append(f'<text x="{pad + 20:.2f}" y="{y + 11:.2f}" font-family="sans-serif" '
                     f'font-size="12">community {label}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
