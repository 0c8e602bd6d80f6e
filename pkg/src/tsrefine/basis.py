"""Spline basis assembly.

Away from extraordinary nodes, each mesh node anchors one tensor-product
B-spline whose local knot vectors are read off a flattened chart of its
neighborhood. Around an extraordinary node of valence k, the k sectors embed
into coordinate planes of a k-dimensional integer grid and the replacement
functions are restrictions of k-variate tensor B-splines indexed by a small
anchor set near the grid origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import (MeshError, TMesh, _ROT, _apply_rot, element_chart_rect,
                   place_point, placement_from_edge, rep_in)

# --------------------------------------------------------------- B-splines


def bspline_eval(knots, x: float, deriv: int = 0, side: int = 1) -> float:
    """Single B-spline on ``len(knots) - 2`` degree over the given knots.

    Intervals are half open to the right; at the very last knot the value is
    the limit from the left, so the support is closed. Derivatives follow the
    two-term degree-reduction rule with vanishing terms for repeated knots.

    ``side=-1`` returns the limit from below instead, which differs from the
    default only when x sits exactly on a knot and the requested derivative
    jumps there.
    """
    knots = list(knots)
    if len(knots) < 2:
        raise MeshError("knot vector too short")
    for a, b in zip(knots, knots[1:]):
        if b < a:
            raise MeshError("knot vector must be non-decreasing")
    return _bs(knots, x, deriv, knots[-1], side)


def _bs_many(knots, xs: np.ndarray) -> np.ndarray:
    """Vectorized values of the single B-spline over the given knots."""
    p = len(knots) - 2
    sup = knots[-1]
    xs = np.asarray(xs, dtype=float)
    vals = []
    for i in range(p + 1):
        inside = (knots[i] <= xs) & (xs < knots[i + 1])
        if knots[i + 1] == sup:
            inside |= xs == sup
        vals.append(inside.astype(float))
    for d in range(1, p + 1):
        nxt = []
        for i in range(p + 1 - d):
            v = np.zeros_like(xs)
            if knots[i + d] != knots[i]:
                v += (xs - knots[i]) / (knots[i + d] - knots[i]) * vals[i]
            if knots[i + d + 1] != knots[i + 1]:
                v += (knots[i + d + 1] - xs) / (knots[i + d + 1] - knots[i + 1]) * vals[i + 1]
            nxt.append(v)
        vals = nxt
    return vals[0]


def _bs(knots, x, deriv, sup, side=1):
    p = len(knots) - 2
    if deriv > 0:
        left = _bs(knots[:-1], x, deriv - 1, sup, side)
        right = _bs(knots[1:], x, deriv - 1, sup, side)
        out = 0.0
        if left and knots[p] != knots[0]:
            out += p * left / (knots[p] - knots[0])
        if right and knots[p + 1] != knots[1]:
            out -= p * right / (knots[p + 1] - knots[1])
        return out
    vals = []
    for i in range(p + 1):
        if side > 0:
            inside = knots[i] <= x < knots[i + 1] or (x == knots[i + 1] == sup)
        else:
            inside = knots[i] < x <= knots[i + 1]
        vals.append(1.0 if inside else 0.0)
    for d in range(1, p + 1):
        nxt = []
        for i in range(p + 1 - d):
            v = 0.0
            if vals[i] and knots[i + d] != knots[i]:
                v += (x - knots[i]) / (knots[i + d] - knots[i]) * vals[i]
            if vals[i + 1] and knots[i + d + 1] != knots[i + 1]:
                v += (knots[i + d + 1] - x) / (knots[i + d + 1] - knots[i + 1]) * vals[i + 1]
            nxt.append(v)
        vals = nxt
    return vals[0]


# ------------------------------------------------------------------- charts


@dataclass
class Chart:
    """Flattened structured neighborhood of one anchor node."""
    anchor: int
    radius: float
    placements: dict[int, tuple[int, float, float]]
    node_xy: dict[int, tuple[float, float]]
    kv_u: list[float]
    kv_v: list[float]
    support: frozenset[int] = field(default_factory=frozenset)


def _crossings(mesh: TMesh, placements, axis: int) -> set[float]:
    """Coordinates where the chart axis line meets element face lines."""
    out = set()
    for qid, pl in placements.items():
        x0, y0, x1, y1 = element_chart_rect(mesh, qid, pl)
        if axis == 0:
            if y0 <= 0.0 <= y1:
                out.add(x0)
                out.add(x1)
        else:
            if x0 <= 0.0 <= x1:
                out.add(y0)
                out.add(y1)
    return out


def _extend(lo, hi, half):
    lo = list(lo[-half:]) if lo else []
    hi = list(hi[:half]) if hi else []
    while len(lo) < half:
        if len(lo) >= 2:
            step = lo[1] - lo[0]
        elif len(lo) == 1:
            step = 0.0 - lo[0]
        else:
            step = hi[0] if hi else None
        if not step or step <= 0.0:
            return None, None
        lo.insert(0, (lo[0] if lo else 0.0) - step)
    while len(hi) < half:
        if len(hi) >= 2:
            step = hi[-1] - hi[-2]
        elif len(hi) == 1:
            step = hi[0] - 0.0
        else:
            step = -lo[-1] if lo else None
        if not step or step <= 0.0:
            return None, None
        hi.append((hi[-1] if hi else 0.0) + step)
    return lo, hi


def _knots_from(values: set[float], half: int):
    lo = sorted(v for v in values if v < 0.0)
    hi = sorted(v for v in values if v > 0.0)
    lo, hi = _extend(lo, hi, half)
    if lo is None:
        return None
    return lo[-half:] + [0.0] + hi[:half]


def build_chart(mesh: TMesh, anchor: int, radius: float | None = None) -> Chart:
    """Flatten the neighborhood of ``anchor`` and derive its knot vectors.

    The walk first follows the two axis lines until each direction holds
    enough face crossings (or leaves the domain), then floods the resulting
    support box. Conflicting placements mean the neighborhood is not
    structured and raise.
    """
    p = mesh.degree
    half = (p + 1) // 2
    if radius is None:
        radius = float(half)
    if radius < half:
        raise MeshError("chart radius below (p+1)/2")
    for ev in mesh.ev_ids:
        dom = mesh.k_disk(ev, half)
        owned = mesh.node_elems.get(anchor, set())
        if owned and owned <= dom:
            raise MeshError(f"anchor {anchor} lies inside an extraordinary-node disk")

    start_elems = sorted(mesh.node_elems.get(anchor, ()))
    if not start_elems:
        raise MeshError(f"node {anchor} has no active elements")
    start = start_elems[0]
    org = rep_in(mesh.topo, mesh.nodes[anchor].gp, mesh.elements[start].rect[0])
    if org is None:
        raise MeshError("anchor not representable in its own element")
    scale = 1.0 / (1 << org[2])
    placements = {start: (0, -org[0] * scale, -org[1] * scale)}
    node_xy: dict[int, tuple[float, float]] = {}

    def record(qid) -> bool:
        pl = placements[qid]
        q = mesh.elements[qid]
        for nid in mesh.element_node_ids(q):
            r = rep_in(mesh.topo, mesh.nodes[nid].gp, q.rect[0])
            if r is None:
                return False
            xy = place_point(pl, r[0] / (1 << r[2]), r[1] / (1 << r[2]))
            old = node_xy.get(nid)
            if old is not None and (abs(old[0] - xy[0]) > 1e-12 or abs(old[1] - xy[1]) > 1e-12):
                return False
            node_xy[nid] = xy
        return True

    if not record(start):
        raise MeshError(f"chart around {anchor}: inconsistent placement")

    box = None
    # closest-so-far crossings per line side: (axis, +1/-1) -> tuple; a side
    # is settled once it holds `half` values that survived one full round
    wins: dict[tuple[int, int], tuple] = {}
    settled: set[tuple[int, int]] = set()

    def wanted(rect) -> bool:
        x0, y0, x1, y1 = rect
        if box is not None:
            bx0, by0, bx1, by1 = box
            return x0 < bx1 and bx0 < x1 and y0 < by1 and by0 < y1
        # knot vectors unresolved: walk the two axis lines, skipping sides
        # whose nearest crossings cannot change any more
        if y0 <= 0.0 <= y1:
            if x1 > 0.0 and (0, 1) not in settled and x0 <= radius:
                return True
            if x0 < 0.0 and (0, -1) not in settled and x1 >= -radius:
                return True
        if x0 <= 0.0 <= x1:
            if y1 > 0.0 and (1, 1) not in settled and y0 <= radius:
                return True
            if y0 < 0.0 and (1, -1) not in settled and y1 >= -radius:
                return True
        return False

    def expand(frontier: list[int]) -> list[int]:
        nxt = []
        for qid in frontier:
            q = mesh.elements[qid]
            for s in range(4):
                for eid in q.sides[s]:
                    for nqid in mesh.edge_elems[eid]:
                        if nqid == qid:
                            continue
                        pl = placement_from_edge(mesh, eid, node_xy, nqid)
                        if pl is None:
                            raise MeshError(
                                f"chart around {anchor}: inconsistent placement")
                        got = placements.get(nqid)
                        if got is not None:
                            if got != pl:
                                raise MeshError(
                                    f"chart around {anchor}: inconsistent placement")
                            continue
                        rect = element_chart_rect(mesh, nqid, pl)
                        if not wanted(rect):
                            continue
                        placements[nqid] = pl
                        if not record(nqid):
                            raise MeshError(
                                f"chart around {anchor}: inconsistent placement")
                        nxt.append(nqid)
        return nxt

    frontier = [start]
    while frontier and len(settled) < 4:
        for axis in (0, 1):
            values = _crossings(mesh, placements, axis)
            for sgn in (1, -1):
                if (axis, sgn) in settled:
                    continue
                if sgn > 0:
                    win = tuple(sorted(v for v in values if v > 0.0)[:half])
                else:
                    win = tuple(sorted(v for v in values if v < 0.0)[-half:])
                # any later find lies beyond the cells already walked, so a
                # full window that survived one round is final
                if len(win) == half and wins.get((axis, sgn)) == win:
                    settled.add((axis, sgn))
                wins[(axis, sgn)] = win
        if len(settled) < 4:
            frontier = expand(frontier)

    kv_u = _knots_from(_crossings(mesh, placements, 0), half)
    kv_v = _knots_from(_crossings(mesh, placements, 1), half)
    if kv_u is None or kv_v is None:
        raise MeshError(f"chart around {anchor}: cannot complete knot vectors")
    box = (kv_u[0], kv_v[0], kv_u[-1], kv_v[-1])

    # the axis corridors rarely cover the support box; flood the rest from
    # every element placed so far
    frontier = list(placements)
    while frontier:
        frontier = expand(frontier)

    support = []
    for qid, pl in placements.items():
        x0, y0, x1, y1 = element_chart_rect(mesh, qid, pl)
        if x0 < box[2] and box[0] < x1 and y0 < box[3] and box[1] < y1:
            support.append(qid)
    return Chart(anchor, radius, placements, node_xy, kv_u, kv_v,
                 frozenset(support))


def local_knot_vectors(chart: Chart) -> tuple[list[float], list[float]]:
    return list(chart.kv_u), list(chart.kv_v)


def eval_structured(mesh: TMesh, chart: Chart, qid: int, u: float, v: float) -> float:
    """Value at local coordinates (u, v) in [0,1]^2 of an active element."""
    pl = chart.placements.get(qid)
    if pl is None:
        return 0.0
    h, a, b, i, j = mesh.elements[qid].rect
    x, y = place_point(pl, (i + u) / (1 << a), (j + v) / (1 << b))
    return bspline_eval(chart.kv_u, x) * bspline_eval(chart.kv_v, y)


def eval_structured_many(mesh: TMesh, chart: Chart, qid: int,
                         uv: np.ndarray) -> np.ndarray:
    pl = chart.placements.get(qid)
    if pl is None:
        return np.zeros(len(uv))
    h, a, b, i, j = mesh.elements[qid].rect
    hx = (i + uv[:, 0]) / (1 << a)
    hy = (j + uv[:, 1]) / (1 << b)
    r, tx, ty = pl
    ra, rb, rc, rd = _ROT[r]
    x = ra * hx + rb * hy + tx
    y = rc * hx + rd * hy + ty
    return _bs_many(chart.kv_u, x) * _bs_many(chart.kv_v, y)


# --------------------------------------------- extraordinary-node embedding


def ev_star(mesh: TMesh, ev: int):
    """Spoke edges and sector elements in CCW order around the node.

    Interior nodes start at the lowest-id spoke; boundary nodes start at the
    boundary spoke that opens the fan.
    """
    spokes = sorted(mesh.node_edges.get(ev, ()))
    if not spokes:
        raise MeshError(f"node {ev} has no active edges")

    def out_element(eid):
        # element in which eid leaves ev along side s from corner s
        for qid in sorted(mesh.edge_elems[eid]):
            q = mesh.elements[qid]
            for s in range(4):
                if q.corners[s] == ev and q.sides[s] and q.sides[s][0] == eid:
                    return qid, s
        return None

    boundary = mesh.nodes[ev].boundary
    if boundary:
        starts = [e for e in spokes if mesh.edges[e].boundary and out_element(e)]
        if len(starts) != 1:
            raise MeshError(f"node {ev}: boundary fan start not unique")
        cur = starts[0]
    else:
        cur = spokes[0]
    order = [cur]
    sectors = []
    k = len(mesh.node_elems[ev])
    for _ in range(k):
        got = out_element(cur)
        if got is None:
            raise MeshError(f"node {ev}: broken fan at edge {cur}")
        qid, s = got
        sectors.append(qid)
        prev_side = mesh.elements[qid].sides[(s + 3) % 4]
        cur = prev_side[-1]
        order.append(cur)
    if boundary:
        if len(set(order)) != k + 1:
            raise MeshError(f"node {ev}: boundary fan does not close")
    else:
        if order[-1] != order[0] or len(set(order[:-1])) != k:
            raise MeshError(f"node {ev}: interior fan does not close")
        order = order[:-1]
    return order, sectors


def anchor_tuples(dims: int, r: int, cyclic: bool) -> list[tuple[int, ...]]:
    """Anchors: base point all -r, with one adjacent coordinate pair free."""
    base = tuple([-r] * dims)
    out = {base}
    pairs = [(m, (m + 1) % dims) for m in range(dims)] if cyclic else \
            [(m, m + 1) for m in range(dims - 1)]
    for m, mn in pairs:
        for i in range(-r, r + 1):
            for j in range(-r, r + 1):
                t = list(base)
                t[m] = i
                t[mn] = j
                out.add(tuple(t))
    return sorted(out)


@dataclass
class EVEmbedding:
    ev: int
    valence: int
    dims: int
    cyclic: bool
    cell: float  # parameter size of one disk element
    # element id -> (sector index, placement into the sector wedge)
    sector_of: dict[int, tuple[int, tuple[int, float, float]]]
    anchors: list[tuple[int, ...]]
    disk: frozenset[int]


def build_ev_embedding(mesh: TMesh, ev: int) -> EVEmbedding:
    """Lay the p-disk of an extraordinary node into per-sector integer wedges.

    Requires the disk to be level uniform; each sector must flatten to a
    p x p block of congruent cells with the node at the wedge corner.
    """
    if ev not in mesh.ev_ids:
        raise MeshError(f"node {ev} is not extraordinary")
    p = mesh.degree
    disk = mesh.k_disk(ev, p)
    levels = set()
    for qid in disk:
        for eid in mesh.element_edge_ids(mesh.elements[qid]):
            levels.add(mesh.edges[eid].level)
    if len(levels) != 1:
        raise MeshError(f"disk of node {ev} is not level uniform: levels {sorted(levels)}")
    cell = 1.0 / (1 << levels.pop())

    spokes, sectors = ev_star(mesh, ev)
    k = len(sectors)
    sector_of: dict[int, tuple[int, tuple[int, float, float]]] = {}
    eps = cell * 1e-9
    for j, corner_elem in enumerate(sectors):
        q = mesh.elements[corner_elem]
        c = next(s for s in range(4) if q.corners[s] == ev)
        org = rep_in(mesh.topo, mesh.nodes[ev].gp, q.rect[0])
        if org is None:
            raise MeshError(f"node {ev} not representable in sector element")
        rot = (4 - c) % 4
        scale = 1.0 / (1 << org[2])
        ox, oy = _apply_rot(rot, org[0] * scale, org[1] * scale)
        placements = {corner_elem: (rot, -ox, -oy)}
        node_xy = {}

        def record(qid, placements=placements, node_xy=node_xy):
            pl = placements[qid]
            q2 = mesh.elements[qid]
            for nid in mesh.element_node_ids(q2):
                rr = rep_in(mesh.topo, mesh.nodes[nid].gp, q2.rect[0])
                if rr is None:
                    return False
                xy = place_point(pl, rr[0] / (1 << rr[2]), rr[1] / (1 << rr[2]))
                old = node_xy.get(nid)
                if old is not None and (abs(old[0] - xy[0]) > 1e-12 or abs(old[1] - xy[1]) > 1e-12):
                    return False
                node_xy[nid] = xy
            return True

        if not record(corner_elem):
            raise MeshError(f"node {ev}: sector {j} does not flatten")
        queue = [corner_elem]
        while queue:
            qid = queue.pop()
            q2 = mesh.elements[qid]
            for s in range(4):
                for eid in q2.sides[s]:
                    for nq in mesh.edge_elems[eid]:
                        if nq == qid or nq not in disk or nq in placements:
                            continue
                        pl = placement_from_edge(mesh, eid, node_xy, nq)
                        if pl is None:
                            raise MeshError(f"node {ev}: sector {j} does not flatten")
                        x0, y0, x1, y1 = element_chart_rect(mesh, nq, pl)
                        if x0 < -eps or y0 < -eps or x1 > p * cell + eps or y1 > p * cell + eps:
                            continue
                        placements[nq] = pl
                        if not record(nq):
                            raise MeshError(f"node {ev}: sector {j} does not flatten")
                        queue.append(nq)
        if len(placements) != p * p:
            raise MeshError(
                f"node {ev}: sector {j} holds {len(placements)} cells, expected {p * p}")
        for qid, pl in placements.items():
            if qid in sector_of:
                raise MeshError(f"node {ev}: element {qid} claimed by two sectors")
            sector_of[qid] = (j, pl)
    if set(sector_of) != disk:
        raise MeshError(f"node {ev}: sectors do not cover the disk")

    boundary = mesh.nodes[ev].boundary
    dims = k + 1 if boundary else k
    r = (p - 1) // 2
    anchors = anchor_tuples(dims, r, cyclic=not boundary)
    return EVEmbedding(ev, k, dims, not boundary, cell, sector_of, anchors,
                       frozenset(disk))


def eval_ev(mesh: TMesh, emb: EVEmbedding, anchor: tuple[int, ...],
            qid: int, u: float, v: float) -> float:
    got = emb.sector_of.get(qid)
    if got is None:
        return 0.0
    j, pl = got
    h, a, b, i, jj = mesh.elements[qid].rect
    x, y = place_point(pl, (i + u) / (1 << a), (jj + v) / (1 << b))
    coords = [0.0] * emb.dims
    m2 = (j + 1) % emb.dims if emb.cyclic else j + 1
    coords[j] = x / emb.cell
    coords[m2] = y / emb.cell
    p = mesh.degree
    half = (p + 1) // 2
    val = 1.0
    for m in range(emb.dims):
        am = anchor[m]
        knots = [am - half + t for t in range(p + 2)]
        val *= bspline_eval(knots, coords[m])
        if val == 0.0:
            return 0.0
    return val


def eval_ev_many(mesh: TMesh, emb: EVEmbedding, anchor: tuple[int, ...],
                 qid: int, uv: np.ndarray) -> np.ndarray:
    got = emb.sector_of.get(qid)
    if got is None:
        return np.zeros(len(uv))
    j, pl = got
    h, a, b, i, jj = mesh.elements[qid].rect
    hx = (i + uv[:, 0]) / (1 << a)
    hy = (jj + uv[:, 1]) / (1 << b)
    r, tx, ty = pl
    ra, rb, rc, rd = _ROT[r]
    x = (ra * hx + rb * hy + tx) / emb.cell
    y = (rc * hx + rd * hy + ty) / emb.cell
    p = mesh.degree
    half = (p + 1) // 2
    m2 = (j + 1) % emb.dims if emb.cyclic else j + 1
    out = np.ones(len(uv))
    for m in range(emb.dims):
        knots = [anchor[m] - half + t for t in range(p + 2)]
        if m == j:
            out = out * _bs_many(knots, x)
        elif m == m2:
            out = out * _bs_many(knots, y)
        else:
            out = out * bspline_eval(knots, 0.0)
    return out


# ------------------------------------------------------------------- basis


@dataclass
class BasisFn:
    kind: str  # "node" or "ev"
    anchor: int | tuple
    ev: int | None = None
    chart: Chart | None = None


class Basis:
    def __init__(self, mesh: TMesh, functions: list[BasisFn],
                 embeddings: dict[int, EVEmbedding]):
        self.mesh = mesh
        self.functions = functions
        self.embeddings = embeddings
        self.by_element: dict[int, list[int]] = {}
        for fi, f in enumerate(functions):
            elems = f.chart.support if f.kind == "node" else embeddings[f.ev].disk
            for qid in elems:
                self.by_element.setdefault(qid, []).append(fi)

    def __len__(self):
        return len(self.functions)

    def eval(self, fi: int, qid: int, u: float, v: float) -> float:
        f = self.functions[fi]
        if f.kind == "node":
            return eval_structured(self.mesh, f.chart, qid, u, v)
        return eval_ev(self.mesh, self.embeddings[f.ev], f.anchor, qid, u, v)

    def eval_many(self, fi: int, qid: int, uv: np.ndarray) -> np.ndarray:
        f = self.functions[fi]
        if f.kind == "node":
            return eval_structured_many(self.mesh, f.chart, qid, uv)
        return eval_ev_many(self.mesh, self.embeddings[f.ev], f.anchor, qid, uv)

    def eval_one_sided(self, fi: int, qid: int, u: float, v: float,
                       axis: int, inward: int, order: int) -> float:
        """One-sided ``order``-th directional derivative at (u, v), taken
        along ``inward`` times the local ``axis`` of element ``qid`` and
        approaching from that same side, in level-0 host units. Exact at knot
        lines, which ordinary evaluation resolves to one fixed side only."""
        f = self.functions[fi]
        h, a, b, i, j = self.mesh.elements[qid].rect
        hx, hy = (i + u) / (1 << a), (j + v) / (1 << b)
        p = self.mesh.degree
        if f.kind == "node":
            pl = f.chart.placements.get(qid)
            if pl is None:
                return 0.0
            r, tx, ty = pl
            ra, rb, rc, rd = _ROT[r]
            x = ra * hx + rb * hy + tx
            y = rc * hx + rd * hy + ty
            dx = (ra if axis == 0 else rb) * inward
            dy = (rc if axis == 0 else rd) * inward
            if dx != 0:
                return (dx ** order) * bspline_eval(f.chart.kv_u, x, order, dx) \
                    * bspline_eval(f.chart.kv_v, y)
            return (dy ** order) * bspline_eval(f.chart.kv_v, y, order, dy) \
                * bspline_eval(f.chart.kv_u, x)
        emb = self.embeddings[f.ev]
        got = emb.sector_of.get(qid)
        if got is None:
            return 0.0
        jsec, pl = got
        r, tx, ty = pl
        ra, rb, rc, rd = _ROT[r]
        x = (ra * hx + rb * hy + tx) / emb.cell
        y = (rc * hx + rd * hy + ty) / emb.cell
        dx = (ra if axis == 0 else rb) * inward
        dy = (rc if axis == 0 else rd) * inward
        half = (p + 1) // 2
        m2 = (jsec + 1) % emb.dims if emb.cyclic else jsec + 1
        out = 1.0 / emb.cell ** order
        for m in range(emb.dims):
            knots = [f.anchor[m] - half + t for t in range(p + 2)]
            if m == jsec:
                if dx != 0:
                    out *= (dx ** order) * bspline_eval(knots, x, order, dx)
                else:
                    out *= bspline_eval(knots, x)
            elif m == m2:
                if dy != 0:
                    out *= (dy ** order) * bspline_eval(knots, y, order, dy)
                else:
                    out *= bspline_eval(knots, y)
            else:
                out *= bspline_eval(knots, 0.0)
            if out == 0.0:
                return 0.0
        return out

    def support_of(self, fi: int) -> frozenset[int]:
        f = self.functions[fi]
        if f.kind == "node":
            return f.chart.support
        return self.embeddings[f.ev].disk


def anchor_nodes(mesh: TMesh) -> list[int]:
    """Mesh nodes that anchor a structured function.

    A node qualifies only if it is a corner of at least one active element;
    a node hanging into every element around it has no face of its own on
    the transverse skeleton, so no knot vector can center on it. Nodes whose
    entire element star sits inside an extraordinary-node disk are covered by
    that node's functions instead.
    """
    half = (mesh.degree + 1) // 2
    excluded = set()
    for ev in mesh.ev_ids:
        dom = mesh.k_disk(ev, half)
        for nid, owned in mesh.node_elems.items():
            if owned and owned <= dom:
                excluded.add(nid)
    out = []
    for nid in sorted(mesh.nodes):
        elems = mesh.node_elems.get(nid)
        if not elems or nid in excluded:
            continue
        if any(nid in mesh.elements[q].corners for q in elems):
            out.append(nid)
    return out


def assemble_basis(mesh: TMesh) -> Basis:
    """All structured anchor functions plus the extraordinary-node systems.

    Charts are cached on the mesh keyed by its mutation counter, so repeated
    assembly over an unchanged mesh is cheap.
    """
    revision = (mesh._next_edge, mesh._next_elem)
    cache = getattr(mesh, "_chart_cache", None)
    if cache is None or cache[0] != revision:
        cache = (revision, {})
        mesh._chart_cache = cache
    charts = cache[1]

    functions: list[BasisFn] = []
    for nid in anchor_nodes(mesh):
        chart = charts.get(nid)
        if chart is None:
            chart = build_chart(mesh, nid)
            charts[nid] = chart
        functions.append(BasisFn("node", nid, chart=chart))
    embeddings = {}
    for ev in sorted(mesh.ev_ids):
        emb = build_ev_embedding(mesh, ev)
        embeddings[ev] = emb
        for t in emb.anchors:
            functions.append(BasisFn("ev", t, ev=ev))
    return Basis(mesh, functions, embeddings)


# ------------------------------------------------------------ numerical rank


def numerical_rank(mat: np.ndarray, tol: float = 1e-9) -> int:
    """Rank by column-pivoted QR; pivots below tol times the largest pivot
    do not count."""
    if mat.size == 0:
        return 0
    import scipy.linalg
    _, r, _ = scipy.linalg.qr(mat, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    if d[0] == 0.0:
        return 0
    return int(np.sum(d > tol * d[0]))
