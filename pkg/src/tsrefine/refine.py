"""Adaptive refinement driver.

refine() bisects a marked edge only after recursively bringing its metric
neighborhood up to level: any neighborhood edge of lower level, or of equal
level and strictly smaller direction index, is refined first. This guard is
what yields the level-jump, locality and complexity guarantees checked by the
verify module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .direction import di_lt
from .mesh import MeshError, TMesh, edge_mid_gp


def locality_constant(p: int, K: int) -> float:
    """Radius factor bounding how far a mark's cascade can reach, as a
    function of the degree and the number of distinct direction indices."""
    g = 2.0 ** (1.0 / K)
    return 0.5 + 2.0 * (p + 1) / (g * (g - 1.0))


@dataclass
class RefineTrace:
    """Per-mark production log plus cumulative counters."""
    edges_initial: int = 0
    marks: int = 0
    records: list[dict] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {"edges_initial": self.edges_initial, "marks": self.marks,
                "records": self.records}

    @staticmethod
    def from_doc(doc: dict) -> "RefineTrace":
        t = RefineTrace(doc["edges_initial"], doc["marks"], doc["records"])
        return t


def _sort_key(mesh: TMesh, eid: int):
    e = mesh.edges[eid]
    di = e.di if e.di is not None else ()
    return (e.level, di, eid)


def _cascade(mesh: TMesh, eid: int, level_cap: int, produced: list[int],
             subdivided: list[int], depth: int = 0) -> None:
    e = mesh.edges[eid]
    if e.di is None:
        raise MeshError("refine requires a direction labeling")
    if e.level >= level_cap:
        raise MeshError(f"refinement level cap {level_cap} reached at edge {eid}")
    if depth > 4 * (level_cap + 8):
        raise MeshError("refinement cascade does not terminate")
    while True:
        worklist = []
        for oid in mesh.edge_neighborhood_coarse(eid):
            o = mesh.edges[oid]
            if o.di is None:
                raise MeshError("refine requires a direction labeling")
            if o.level < e.level or (o.level == e.level and di_lt(o.di, e.di)):
                worklist.append(oid)
        if not worklist:
            break
        worklist.sort(key=lambda x: _sort_key(mesh, x))
        _cascade(mesh, worklist[0], level_cap, produced, subdivided, depth + 1)
    res = mesh.subdivide_edge(eid)
    subdivided.append(eid)
    produced.extend(res["edges"])


def _nonuniform_ev_disks(mesh: TMesh):
    out = []
    for ev in sorted(mesh.ev_ids):
        disk = mesh.k_disk(ev, mesh.degree)
        levels = set()
        edges = set()
        for qid in disk:
            for eid in mesh.element_edge_ids(mesh.elements[qid]):
                edges.add(eid)
                levels.add(mesh.edges[eid].level)
        if len(levels) > 1:
            out.append((ev, edges, max(levels)))
    return out


def enforce_ev_disk(mesh: TMesh, ev: int, level_cap: int = 30,
                    _collect: tuple[list[int], list[int]] | None = None) -> list[int]:
    """Re-level one extraordinary-node p-disk to its maximum edge level.

    Returns all edges produced. The disk is recomputed after every pass since
    the triggered refinements reshape it.
    """
    if ev not in mesh.ev_ids:
        raise MeshError(f"node {ev} is not extraordinary")
    produced, subdivided = _collect if _collect is not None else ([], [])
    while True:
        disk = mesh.k_disk(ev, mesh.degree)
        edges = set()
        for qid in disk:
            edges.update(mesh.element_edge_ids(mesh.elements[qid]))
        levels = {mesh.edges[eid].level for eid in edges}
        if len(levels) <= 1:
            break
        lmax = max(levels)
        targets = sorted((eid for eid in edges if mesh.edges[eid].level < lmax),
                         key=lambda x: _sort_key(mesh, x))
        for eid in targets:
            if mesh.edges[eid].active:
                _cascade(mesh, eid, level_cap, produced, subdivided)
    return produced


def refine(mesh: TMesh, eid: int, level_cap: int = 30,
           _collect: tuple[list[int], list[int]] | None = None) -> list[int]:
    """Refine one marked edge (guard cascade, then bisection), then restore
    level uniformity of any extraordinary-node disk the cascade touched.

    Returns the ids of all edges created.
    """
    produced, subdivided = _collect if _collect is not None else ([], [])
    if not mesh.edges[eid].active:
        return []
    _cascade(mesh, eid, level_cap, produced, subdivided)
    while True:
        bad = _nonuniform_ev_disks(mesh)
        if not bad:
            break
        for ev, _edges, _lmax in bad:
            enforce_ev_disk(mesh, ev, level_cap, (produced, subdivided))
    return produced


def refine_batch(mesh: TMesh, marks, trace: RefineTrace | None = None,
                 level_cap: int = 30) -> RefineTrace:
    """Process marks in order; absorbed marks (already inactive) still count."""
    if trace is None:
        trace = RefineTrace(edges_initial=len(mesh.active_edges()))
    for mark in marks:
        e = mesh.edges.get(mark)
        if e is None:
            raise MeshError(f"unknown mark edge {mark}")
        trace.marks += 1
        if not e.active:
            trace.records.append({
                "mark": mark, "mark_level": e.level, "absorbed": True,
                "produced": [], "K": 0,
                "edges_active": len(mesh.active_edges())})
            continue
        produced: list[int] = []
        subdivided: list[int] = []
        refine(mesh, mark, level_cap, (produced, subdivided))
        dis = set()
        for sid in subdivided:
            dis.update(mesh.edges[sid].di)
        # searching past twice the locality bound only proves what a recorded
        # infinity already says, so cap the walk there
        c1 = locality_constant(mesh.degree, max(1, len(dis)))
        mid = edge_mid_gp(e.host)
        rec_produced = []
        for pid in produced:
            pe = mesh.edges[pid]
            level = max(e.level, pe.level) + 1
            nmax = math.ceil(2.0 * c1) << (level - pe.level)
            if nmax > 300_000:
                d = float("inf")
            else:
                steps = mesh.dist_steps(mid, edge_mid_gp(pe.host), nmax)
                d = float("inf") if steps is None else steps / (1 << level)
            rec_produced.append([pid, pe.level, d])
        trace.records.append({
            "mark": mark, "mark_level": e.level, "absorbed": False,
            "produced": rec_produced, "K": len(dis),
            "edges_active": len(mesh.active_edges())})
    return trace


# ------------------------------------------------------------- mark language


def resolve_marks(mesh: TMesh, spec: str) -> list[int]:
    """edge:<id> | near:<x>,<y> | curve:<x0>,<y0>:<x1>,<y1> -> active edge ids."""
    if spec.startswith("edge:"):
        eid = int(spec[5:])
        if eid not in mesh.edges:
            raise MeshError(f"unknown edge {eid}")
        return [eid]
    if spec.startswith("near:"):
        x, y = (float(t) for t in spec[5:].split(","))
        best, best_d = None, None
        for eid2 in sorted(mesh.active_edges()):
            e = mesh.edges[eid2]
            pa = mesh.nodes[e.nodes[0]].xy
            pb = mesh.nodes[e.nodes[1]].xy
            if pa is None or pb is None:
                raise MeshError("near: requires node positions")
            mx, my = (pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0
            d = (mx - x) ** 2 + (my - y) ** 2
            if best_d is None or d < best_d:
                best, best_d = eid2, d
        if best is None:
            raise MeshError("mesh has no active edges")
        return [best]
    if spec.startswith("curve:"):
        try:
            a, b = spec[6:].split(":")
            x0, y0 = (float(t) for t in a.split(","))
            x1, y1 = (float(t) for t in b.split(","))
        except ValueError:
            raise MeshError(f"malformed mark spec {spec!r}") from None
        out = []
        for eid2 in sorted(mesh.active_edges()):
            e = mesh.edges[eid2]
            pa = mesh.nodes[e.nodes[0]].xy
            pb = mesh.nodes[e.nodes[1]].xy
            if pa is None or pb is None:
                raise MeshError("curve: requires node positions")
            if _segments_intersect(pa, pb, (x0, y0), (x1, y1)):
                out.append(eid2)
        return sorted(out)
    raise MeshError(f"malformed mark spec {spec!r}")


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1 = _orient(p3, p4, p1)
    d2 = _orient(p3, p4, p2)
    d3 = _orient(p1, p2, p3)
    d4 = _orient(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True

    def on_seg(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    if d1 == 0 and on_seg(p3, p4, p1):
        return True
    if d2 == 0 and on_seg(p3, p4, p2):
        return True
    if d3 == 0 and on_seg(p1, p2, p3):
        return True
    if d4 == 0 and on_seg(p1, p2, p4):
        return True
    return False
