"""Matplotlib figures for verification reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .mesh import TMesh  # noqa: E402
from .refine import RefineTrace  # noqa: E402


def save_mesh_figure(mesh: TMesh, path: str, color_by: str = "level"):
    """Active edges drawn as line segments, colored by level or direction."""
    fig, ax = plt.subplots(figsize=(6, 6), dpi=120)
    cmap = plt.get_cmap("tab10")
    for eid in sorted(mesh.active_edges()):
        e = mesh.edges[eid]
        na, nb = (mesh.nodes[n] for n in e.nodes)
        if na.xy is None or nb.xy is None:
            plt.close(fig)
            raise ValueError("mesh has no node positions to plot")
        key = e.level if color_by == "level" else (min(e.di) if e.di else 0)
        ax.plot([na.xy[0], nb.xy[0]], [na.xy[1], nb.xy[1]],
                color=cmap(key % 10), linewidth=0.9)
    ax.set_aspect("equal")
    ax.set_title(f"active edges by {color_by}")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def save_ratio_figure(trace: RefineTrace, path: str, ceiling: int = 64):
    """Prefix edge-production ratio per mark against the admissible ceiling."""
    ratios = []
    e0 = trace.edges_initial
    for j, rec in enumerate(trace.records, start=1):
        ratios.append((rec["edges_active"] - e0) / j)
    fig, ax = plt.subplots(figsize=(6, 3.2), dpi=120)
    ax.plot(range(1, len(ratios) + 1), ratios, lw=1.0, label="(#edges - #initial) / marks")
    ax.axhline(ceiling, color="#d62728", lw=1.0, ls="--", label=f"ceiling {ceiling}")
    ax.set_xlabel("marks processed")
    ax.set_ylabel("ratio")
    ax.legend(loc="best", fontsize=8)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
