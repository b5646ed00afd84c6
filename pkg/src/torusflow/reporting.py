"""Deterministic JSON/CSV artifacts and static SVG renderings."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def artifact(schema, payload):
    """Attach the schema tag and version to a report dictionary."""
    out = {"schema": schema, "version": SCHEMA_VERSION}
    out.update({k: v for k, v in payload.items() if k not in ("schema", "version")})
    return _clean(out)


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def svg_scatter(points, hull_vertices=None, segment=None, title="", size=480, pad=40):
    """Scatter of 2D points with an optional hull polygon and reference segment."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    allp = [pts]
    if hull_vertices is not None and len(hull_vertices):
        allp.append(np.atleast_2d(hull_vertices))
    if segment is not None:
        allp.append(np.atleast_2d(segment))
    allp = np.vstack(allp)
    lo = allp.min(axis=0)
    hi = allp.max(axis=0)
    span = max(float((hi - lo).max()), 1e-9)
    centre = (lo + hi) / 2
    scale = (size - 2 * pad) / span

    def tx(p):
        x = pad + (p[0] - centre[0]) * scale + (size - 2 * pad) / 2
        y = size - (pad + (p[1] - centre[1]) * scale + (size - 2 * pad) / 2)
        return f"{x:.3f}", f"{y:.3f}"

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<text x="{pad}" y="{pad / 2:.0f}" font-family="sans-serif" font-size="13">{title}</text>',
    ]
    if segment is not None:
        (x1, y1), (x2, y2) = tx(segment[0]), tx(segment[1])
        lines.append(f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="#999" stroke-width="3"/>')
    if hull_vertices is not None and len(hull_vertices) > 1:
        poly = " ".join(",".join(tx(p)) for p in np.atleast_2d(hull_vertices))
        lines.append(f'<polygon points="{poly}" fill="none" stroke="#c33" stroke-width="1.5"/>')
    for p in pts:
        x, y = tx(p)
        lines.append(f'<circle cx="{x}" cy="{y}" r="2.5" fill="#236"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
