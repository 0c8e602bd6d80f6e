"""SVG rendering of the active edge skeleton.

One polyline per active edge, colored by refinement level or by direction
index. Output is deterministic: edges are emitted in id order with fixed
number formatting.
"""

from __future__ import annotations

from .mesh import MeshError, TMesh

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f")


def _fmt(x: float) -> str:
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def mesh_svg(mesh: TMesh, color_by: str = "level",
             highlight: set[int] | None = None, size: int = 640) -> str:
    """SVG 1.1 document for the active edges of the mesh."""
    if color_by not in ("level", "di"):
        raise MeshError(f"unknown color key: {color_by}")
    xs, ys = [], []
    for n in mesh.nodes.values():
        if n.xy is None:
            raise MeshError("mesh has no node positions to plot")
        xs.append(n.xy[0])
        ys.append(n.xy[1])
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    w = max(x1 - x0, 1e-9)
    h = max(y1 - y0, 1e-9)
    pad = 0.04 * max(w, h)
    scale = size / max(w, h)

    def sx(x):
        return (x - x0 + pad) * scale

    def sy(y):
        return (y1 - y + pad) * scale  # flip so +y points up

    width = _fmt((w + 2 * pad) * scale)
    height = _fmt((h + 2 * pad) * scale)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]
    highlight = highlight or set()
    for eid in sorted(mesh.active_edges()):
        e = mesh.edges[eid]
        na, nb = (mesh.nodes[n] for n in e.nodes)
        if color_by == "level":
            color = _PALETTE[e.level % len(_PALETTE)]
        else:
            key = min(e.di) if e.di else 0
            color = _PALETTE[key % len(_PALETTE)]
        width_px = 3.0 if eid in highlight else 1.2
        pts = (f"{_fmt(sx(na.xy[0]))},{_fmt(sy(na.xy[1]))} "
               f"{_fmt(sx(nb.xy[0]))},{_fmt(sy(nb.xy[1]))}")
        lines.append(
            f'<polyline id="e{eid}" points="{pts}" fill="none" '
            f'stroke="{color}" stroke-width="{_fmt(width_px)}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
