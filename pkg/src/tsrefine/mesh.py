"""T-mesh data structures: records, incidence, metric queries and serialization.

The mesh keeps its full refinement lineage. Edges and elements are never
deleted; an ``active`` flag marks the current partition. All geometry is
exact dyadic integer arithmetic relative to the unit parameter squares of the
initial elements, so metric predicates are decided without rounding.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field

from .metric import DistField, GridPoint, InitialTopology, corner_coord, normalize


class MeshError(Exception):
    """Raised for malformed documents or violated operation preconditions."""


@dataclass
class NodeRec:
    id: int
    gp: GridPoint
    xy: tuple[float, float] | None = None
    boundary: bool = False


@dataclass
class EdgeRec:
    id: int
    nodes: tuple[int, int]
    level: int
    # host placement: (initial element, resolution rho, axis, i, j, span)
    # axis 0 runs along x of the host square, axis 1 along y; span = 2**(rho-level)
    host: tuple[int, int, int, int, int, int]
    di: tuple[int, ...] | None = None
    parent: int | None = None
    children: tuple[int, int] | None = None
    active: bool = True
    boundary: bool = False


@dataclass
class ElementRec:
    id: int
    corners: tuple[int, int, int, int]
    # sides[s] lists active edge ids from corner s to corner (s+1)%4;
    # corner 0 sits at the rect minimum, so sides 0,2 carry axis-0 edges
    sides: list[list[int]]
    # (initial element, a, b, i, j): rect [i,i+1]/2^a x [j,j+1]/2^b in the host square
    rect: tuple[int, int, int, int, int]
    parent: int | None = None
    children: tuple[int, int] | None = None
    active: bool = True


def _normalize_host(host):
    helem, rho, axis, i, j, span = host
    while rho > 0 and i % 2 == 0 and j % 2 == 0 and span % 2 == 0:
        rho -= 1
        i //= 2
        j //= 2
        span //= 2
    return (helem, rho, axis, i, j, span)


def edge_endpoint_gps(host) -> tuple[GridPoint, GridPoint]:
    helem, rho, axis, i, j, span = host
    if axis == 0:
        return (GridPoint(helem, rho, i, j), GridPoint(helem, rho, i + span, j))
    return (GridPoint(helem, rho, i, j), GridPoint(helem, rho, i, j + span))


def edge_mid_gp(host) -> GridPoint:
    helem, rho, axis, i, j, span = host
    if axis == 0:
        return GridPoint(helem, rho + 1, 2 * i + span, 2 * j)
    return GridPoint(helem, rho + 1, 2 * i, 2 * j + span)


class TMesh:
    """Unstructured T-mesh with refinement history.

    Construction goes through :func:`load_mesh`. Mutation happens only via
    ``subdivide_edge`` (and the refinement driver built on top of it).
    """

    def __init__(self, degree: int = 1):
        if degree < 1 or degree % 2 == 0:
            raise MeshError("degree must be odd and >= 1")
        self.degree = degree
        self.nodes: dict[int, NodeRec] = {}
        self.edges: dict[int, EdgeRec] = {}
        self.elements: dict[int, ElementRec] = {}
        self.ev_ids: list[int] = []
        self.aux_nodes: set[int] = set()
        self.topo: InitialTopology | None = None
        self.node_elems: dict[int, set[int]] = {}
        self.node_edges: dict[int, set[int]] = {}
        self.edge_elems: dict[int, set[int]] = {}
        self._next_node = 0
        self._next_edge = 0
        self._next_elem = 0
        self._fields: OrderedDict[tuple, DistField] = OrderedDict()
        self._nb_cache: dict[int, tuple[frozenset[int], frozenset[int]]] = {}
        self._nbc_cache: dict[int, tuple[frozenset[int], frozenset[int]]] = {}
        self._nb_deps: dict[int, set[int]] = {}
        self._qu_cache: dict[int, bool] = {}

    # ---------------------------------------------------------------- queries

    def active_edges(self) -> list[int]:
        return [eid for eid, e in self.edges.items() if e.active]

    def active_elements(self) -> list[int]:
        return [qid for qid, q in self.elements.items() if q.active]

    def element_edge_ids(self, q: ElementRec) -> list[int]:
        out = []
        for s in range(4):
            out.extend(q.sides[s])
        return out

    def element_node_ids(self, q: ElementRec) -> list[int]:
        """Corners plus hanging nodes, in boundary walk order."""
        out = []
        for s in range(4):
            out.append(q.corners[s])
            side = q.sides[s]
            for a, b in zip(side, side[1:]):
                shared = set(self.edges[a].nodes) & set(self.edges[b].nodes)
                out.extend(sorted(shared))
        return out

    def node_gp(self, nid: int) -> GridPoint:
        return self.nodes[nid].gp

    def mid_gp(self, eid: int) -> GridPoint:
        return edge_mid_gp(self.edges[eid].host)

    def is_ev(self, nid: int) -> bool:
        return nid in self._ev_set

    @property
    def _ev_set(self):
        return set(self.ev_ids)

    def classify_node(self, nid: int) -> str:
        """regular / T-node / I-node / extraordinary, per current incidence."""
        if nid in self._ev_set:
            return "extraordinary"
        n = len(self.node_elems.get(nid, ()))
        if self.nodes[nid].boundary:
            return "I-node" if n == 1 else "regular"
        if n == 2:
            return "I-node"
        if n == 3:
            return "T-node"
        return "regular"

    def valence(self, nid: int) -> int:
        return len(self.node_elems.get(nid, ()))

    # ------------------------------------------------------------------ disks

    def k_disk(self, nid: int, k: int) -> set[int]:
        if k < 1:
            raise MeshError("k-disk requires k >= 1")
        disk = set(self.node_elems.get(nid, ()))
        for _ in range(k - 1):
            rim = set()
            for q in disk:
                rim.update(self.element_node_ids(self.elements[q]))
            nxt = set(disk)
            for n in rim:
                nxt.update(self.node_elems.get(n, ()))
            if nxt == disk:
                break
            disk = nxt
        return disk

    # ----------------------------------------------------------------- metric

    # metric fields are pure caches; keep enough of them for the guard and
    # trace queries of one region without letting a long campaign hold every
    # field it ever touched
    _FIELD_CAP = 4096

    def dist_field(self, src: GridPoint, level: int) -> DistField:
        src = self.topo.canon_point(src)
        if src.level > level:
            raise MeshError("point not representable at requested level")
        lifted = GridPoint(src.elem, level, src.i << (level - src.level), src.j << (level - src.level))
        key = (lifted.elem, lifted.i, lifted.j, level)
        f = self._fields.get(key)
        if f is None:
            f = DistField(self.topo, lifted)
            while len(self._fields) >= self._FIELD_CAP:
                self._fields.pop(next(iter(self._fields)))
            self._fields[key] = f
        else:
            self._fields.move_to_end(key)
        return f

    def dist_steps(self, a: GridPoint, b: GridPoint, nmax: int) -> int | None:
        """Cell-chain count between two grid points at their common level.

        Returns None when the distance exceeds nmax steps.
        """
        a = normalize(a)
        b = normalize(b)
        level = max(a.level, b.level)
        f = self.dist_field(a, level)
        return f.node_step(b, nmax)

    def mesh_dist(self, a: GridPoint, b: GridPoint, radius: float | None = None) -> float:
        level = max(a.level, b.level)
        if radius is None:
            nmax = 1 << 62
        else:
            nmax = math.ceil(radius * (1 << level))
        steps = self.dist_steps(a, b, nmax)
        if steps is None:
            return math.inf
        d = steps / (1 << level)
        if radius is not None and d > radius:
            return math.inf
        return d

    # ----------------------------------------------------- edge neighborhoods

    def _coarse_ball_elements(self, eid: int) -> set[int]:
        """Active elements overlapping a conservative ball around midp(edge).

        Ball: all virtual cells within p+3 BFS steps at level l(E)+1. Any edge
        whose midpoint lies within metric radius (p+1)/2 * 2^-l(E) bounds one
        of these elements, and so does any edge whose children could enter
        that radius, which is what makes the result usable as a dependency
        set for cache invalidation.
        """
        e = self.edges[eid]
        lvl = e.level + 1
        f = self.dist_field(edge_mid_gp(e.host), lvl)
        by_host: dict[int, set[tuple[int, int]]] = {}
        for h, cx, cy in f.cells_within(self.degree + 3):
            s = by_host.get(h)
            if s is None:
                s = by_host[h] = set()
            s.add((cx, cy))
        out = set()
        for helem, cset in by_host.items():
            bx0 = min(c[0] for c in cset)
            bx1 = max(c[0] for c in cset)
            by0 = min(c[1] for c in cset)
            by1 = max(c[1] for c in cset)
            stack = [helem]
            while stack:
                qid = stack.pop()
                q = self.elements[qid]
                _h, a, b, i, j = q.rect
                # closed rect of the element in ball-level units
                if a <= lvl:
                    x0 = i << (lvl - a)
                    x1 = (i + 1) << (lvl - a)
                else:
                    x0 = i >> (a - lvl)
                    x1 = ((i + 1) + (1 << (a - lvl)) - 1) >> (a - lvl)
                if x1 < bx0 or x0 > bx1 + 1:
                    continue
                if b <= lvl:
                    y0 = j << (lvl - b)
                    y1 = (j + 1) << (lvl - b)
                else:
                    y0 = j >> (b - lvl)
                    y1 = ((j + 1) + (1 << (b - lvl)) - 1) >> (b - lvl)
                if y1 < by0 or y0 > by1 + 1:
                    continue
                # closed overlap with cell (cx, cy) iff cx in [x0-1, x1] etc.
                nx = x1 - x0 + 2
                ny = y1 - y0 + 2
                if nx * ny > len(cset):
                    hit = any(x0 - 1 <= cx <= x1 and y0 - 1 <= cy <= y1
                              for cx, cy in cset)
                else:
                    hit = any((cx, cy) in cset
                              for cx in range(x0 - 1, x1 + 1)
                              for cy in range(y0 - 1, y1 + 1))
                if not hit:
                    continue
                if q.active:
                    out.add(qid)
                elif q.children:
                    stack.extend(q.children)
        return out

    def edge_neighborhood(self, eid: int) -> frozenset[int]:
        """All active edges E' with dist(midp E, midp E') <= (p+1)/2 * 2^-l(E)."""
        e = self.edges[eid]
        if not e.active:
            raise MeshError(f"edge {eid} is not active")
        cached = self._nb_cache.get(eid)
        if cached is not None:
            return cached[0]
        ball = self._coarse_ball_elements(eid)
        cand = set()
        for qid in ball:
            cand.update(self.element_edge_ids(self.elements[qid]))
        mid = edge_mid_gp(e.host)
        result = set()
        half = (self.degree + 1) // 2
        for cid in cand:
            c = self.edges[cid]
            level = max(e.level, c.level) + 1
            nmax = half << (level - e.level)
            f = self.dist_field(mid, level)
            steps = f.node_step(edge_mid_gp(c.host), nmax)
            if steps is not None:
                result.add(cid)
        result = frozenset(result)
        deps = frozenset(ball)
        self._nb_cache[eid] = (result, deps)
        for qid in deps:
            self._nb_deps.setdefault(qid, set()).add(eid)
        return result

    def edge_neighborhood_coarse(self, eid: int) -> frozenset[int]:
        """Active edges E' at level <= l(E) with dist(midp E, midp E') within
        the neighborhood radius.

        The refinement guard only ever forces coarser-or-equal edges, and all
        of those midpoints already live on the level l(E)+1 grid, so a single
        small field answers every candidate. The full neighborhood query pays
        for per-pair levels; this one never does.
        """
        e = self.edges[eid]
        if not e.active:
            raise MeshError(f"edge {eid} is not active")
        cached = self._nbc_cache.get(eid)
        if cached is not None:
            return cached[0]
        ball = self._coarse_ball_elements(eid)
        f = self.dist_field(edge_mid_gp(e.host), e.level + 1)
        result = set()
        seen = set()
        for qid in ball:
            for cid in self.element_edge_ids(self.elements[qid]):
                if cid in seen:
                    continue
                seen.add(cid)
                c = self.edges[cid]
                if c.level > e.level:
                    continue
                if f.node_step(edge_mid_gp(c.host), self.degree + 1) is not None:
                    result.add(cid)
        result = frozenset(result)
        deps = frozenset(ball)
        self._nbc_cache[eid] = (result, deps)
        for qid in deps:
            self._nb_deps.setdefault(qid, set()).add(eid)
        return result

    def _touch_elements(self, qids):
        """Invalidate caches that depended on the given elements."""
        for qid in qids:
            for eid in self._nb_deps.pop(qid, ()):
                self._nb_cache.pop(eid, None)
                self._nbc_cache.pop(eid, None)
                self._qu_cache.pop(eid, None)

    # ------------------------------------------------------------ prolongation

    def edge_prolongation(self, seed, order: int) -> set[int]:
        """ep^order: edges sharing a node but no element, iterated."""
        if order < 0:
            raise MeshError("prolongation order must be >= 0")
        cur = set(seed)
        for sid in cur:
            if not self.edges[sid].active:
                raise MeshError(f"seed edge {sid} is not active")
        for _ in range(order):
            nxt = set(cur)
            for eid in cur:
                e = self.edges[eid]
                mine = self.edge_elems[eid]
                for n in e.nodes:
                    for oid in self.node_edges.get(n, ()):
                        if oid != eid and not (self.edge_elems[oid] & mine):
                            nxt.add(oid)
            if nxt == cur:
                break
            cur = nxt
        return cur

    # ---------------------------------------------------------------- mutation

    def _new_node(self, gp: GridPoint, xy, boundary: bool) -> int:
        nid = self._next_node
        self._next_node += 1
        self.nodes[nid] = NodeRec(nid, self.topo.canon_point(gp), xy, boundary)
        self.node_elems[nid] = set()
        self.node_edges[nid] = set()
        return nid

    def _new_edge(self, nodes, level, host, di, parent, boundary) -> int:
        eid = self._next_edge
        self._next_edge += 1
        self.edges[eid] = EdgeRec(eid, tuple(nodes), level, _normalize_host(host),
                                  di, parent, None, True, boundary)
        self.edge_elems[eid] = set()
        for n in nodes:
            self.node_edges[n].add(eid)
        return eid

    def _new_element(self, corners, sides, rect, parent) -> int:
        qid = self._next_elem
        self._next_elem += 1
        q = ElementRec(qid, tuple(corners), [list(s) for s in sides], rect, parent)
        self.elements[qid] = q
        for n in self.element_node_ids(q):
            self.node_elems[n].add(qid)
        for eid in self.element_edge_ids(q):
            self.edge_elems[eid].add(qid)
        return qid

    def _retire_element(self, qid: int):
        q = self.elements[qid]
        q.active = False
        for n in self.element_node_ids(q):
            self.node_elems[n].discard(qid)
        for eid in self.element_edge_ids(q):
            self.edge_elems[eid].discard(qid)

    def _edge_children_hosts(self, host):
        helem, rho, axis, i, j, span = host
        if span % 2 == 0:
            h1 = (helem, rho, axis, i, j, span // 2)
            if axis == 0:
                h2 = (helem, rho, axis, i + span // 2, j, span // 2)
            else:
                h2 = (helem, rho, axis, i, j + span // 2, span // 2)
        else:
            if axis == 0:
                h1 = (helem, rho + 1, axis, 2 * i, 2 * j, 1)
                h2 = (helem, rho + 1, axis, 2 * i + 1, 2 * j, 1)
            else:
                h1 = (helem, rho + 1, axis, 2 * i, 2 * j, 1)
                h2 = (helem, rho + 1, axis, 2 * i, 2 * j + 1, 1)
        return h1, h2

    def subdivide_edge(self, eid: int) -> dict:
        """Bisect an active edge and split neighbor elements where the
        opposite side is already subdivided (connecting edge inherits level
        and direction index from its opposite sides).

        Returns ids of created objects. Raises MeshError if the edge does not
        occupy a full side of each active neighbor element.
        """
        e = self.edges.get(eid)
        if e is None:
            raise MeshError(f"unknown edge {eid}")
        if not e.active:
            raise MeshError(f"edge {eid} is not active")
        neighbors = sorted(self.edge_elems[eid])
        host_sides = []
        for qid in neighbors:
            q = self.elements[qid]
            s = next((k for k in range(4) if eid in q.sides[k]), None)
            if s is None or q.sides[s] != [eid]:
                raise MeshError(f"edge {eid} is not a full side of element {qid}")
            host_sides.append((qid, s))

        na, nb = e.nodes
        xy = None
        if self.nodes[na].xy is not None and self.nodes[nb].xy is not None:
            xa, ya = self.nodes[na].xy
            xb, yb = self.nodes[nb].xy
            xy = ((xa + xb) / 2.0, (ya + yb) / 2.0)
        mid = self._new_node(edge_mid_gp(e.host), xy, e.boundary)

        h1, h2 = self._edge_children_hosts(e.host)
        c1 = self._new_edge((na, mid), e.level + 1, h1, e.di, eid, e.boundary)
        c2 = self._new_edge((mid, nb), e.level + 1, h2, e.di, eid, e.boundary)
        e.active = False
        e.children = (c1, c2)
        for n in e.nodes:
            self.node_edges[n].discard(eid)

        created_edges = [c1, c2]
        created_nodes = [mid]
        split_elems = []
        touched = set(neighbors)

        for qid, s in host_sides:
            q = self.elements[qid]
            corner_node = q.corners[s]
            if na == corner_node:
                q.sides[s] = [c1, c2]
            else:
                q.sides[s] = [c2, c1]
            self.edge_elems[eid].discard(qid)
            self.edge_elems[c1].add(qid)
            self.edge_elems[c2].add(qid)
            self.node_elems[mid].add(qid)

        for qid, s in host_sides:
            q = self.elements[qid]
            opp = q.sides[(s + 2) % 4]
            if len(opp) == 2:
                conn, kids = self._split_element(qid, 0 if s in (0, 2) else 1)
                created_edges.append(conn)
                split_elems.append(qid)
                touched.update(kids)

        self._touch_elements(touched)
        return {
            "edges": created_edges,
            "nodes": created_nodes,
            "split_elements": split_elems,
            "children": (c1, c2),
        }

    def _split_element(self, qid: int, pair: int):
        """Split element qid whose side pair (0,2) if pair==0 else (1,3) is
        bisected; returns (connector edge id, (child ids))."""
        q = self.elements[qid]
        h, a, b, i, j = q.rect
        s0 = q.sides[pair]
        s2 = q.sides[pair + 2]
        assert len(s0) == 2 and len(s2) == 2, "split without bisected side pair"
        m0 = (set(self.edges[s0[0]].nodes) & set(self.edges[s0[1]].nodes)).pop()
        m2 = (set(self.edges[s2[0]].nodes) & set(self.edges[s2[1]].nodes)).pop()

        t1 = q.sides[(pair + 1) % 4]
        t3 = q.sides[(pair + 3) % 4]

        def side_level(side):
            lv = self.edges[side[0]].level
            return lv if len(side) == 1 else lv - 1

        lvl = side_level(t1)
        assert lvl == side_level(t3), "inconsistent transverse side lengths"
        di = None
        dis = set()
        for sid in t1 + t3:
            if self.edges[sid].di is not None:
                dis.update(self.edges[sid].di)
        if dis:
            di = tuple(sorted(dis))

        if pair == 0:
            # vertical connector at the x midline
            rho = max(a + 1, b)
            host = (h, rho, 1, (2 * i + 1) << (rho - a - 1), j << (rho - b), 1 << (rho - b))
            lo, hi = (m0, m2)
            conn = self._new_edge((lo, hi), lvl, host, di, None, False)
            c = q.corners
            left = self._new_element(
                (c[0], m0, m2, c[3]),
                ([s0[0]], [conn], [s2[1]], t3),
                (h, a + 1, b, 2 * i, j), qid)
            right = self._new_element(
                (m0, c[1], c[2], m2),
                ([s0[1]], t1, [s2[0]], [conn]),
                (h, a + 1, b, 2 * i + 1, j), qid)
        else:
            rho = max(a, b + 1)
            host = (h, rho, 0, i << (rho - a), (2 * j + 1) << (rho - b - 1), 1 << (rho - a))
            conn = self._new_edge((m2, m0), lvl, host, di, None, False)
            c = q.corners
            left = self._new_element(
                (c[0], c[1], m0, m2),
                (t3, [s0[0]], [conn], [s2[1]]),
                (h, a, b + 1, i, 2 * j), qid)
            right = self._new_element(
                (m2, m0, c[2], c[3]),
                ([conn], [s0[1]], t1, [s2[0]]),
                (h, a, b + 1, i, 2 * j + 1), qid)

        self._retire_element(qid)
        q.children = (left, right)
        for s in range(4):
            for side in (self.elements[left].sides[s], self.elements[right].sides[s]):
                assert len(side) <= 2, "side with more than two edges"
        return conn, (left, right)

    # -------------------------------------------------------------------- copy

    def copy(self) -> "TMesh":
        m = TMesh(self.degree)
        m.topo = self.topo
        m.nodes = {k: NodeRec(v.id, v.gp, v.xy, v.boundary) for k, v in self.nodes.items()}
        m.edges = {k: EdgeRec(v.id, v.nodes, v.level, v.host, v.di, v.parent,
                              v.children, v.active, v.boundary) for k, v in self.edges.items()}
        m.elements = {k: ElementRec(v.id, v.corners, [list(s) for s in v.sides],
                                    v.rect, v.parent, v.children, v.active)
                      for k, v in self.elements.items()}
        m.ev_ids = list(self.ev_ids)
        m.aux_nodes = set(self.aux_nodes)
        m.node_elems = {k: set(v) for k, v in self.node_elems.items()}
        m.node_edges = {k: set(v) for k, v in self.node_edges.items()}
        m.edge_elems = {k: set(v) for k, v in self.edge_elems.items()}
        m._next_node = self._next_node
        m._next_edge = self._next_edge
        m._next_elem = self._next_elem
        m._fields = self._fields  # metric depends only on the shared topology
        return m


# ------------------------------------------------------------------- loading


def _derive_initial_edges(mesh: TMesh, corners_by_elem):
    n = 1
    pair_owner: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for qid in sorted(corners_by_elem):
        quad = corners_by_elem[qid]
        for s in range(4):
            a, b = quad[s], quad[(s + 1) % 4]
            pair_owner.setdefault((min(a, b), max(a, b)), []).append((qid, s))
    edge_of_pair = {}
    for pair in sorted(pair_owner):
        owners = pair_owner[pair]
        qid, s = owners[0]
        boundary = len(owners) == 1
        x0, y0 = corner_coord(s, n)
        x1, y1 = corner_coord((s + 1) % 4, n)
        axis = 0 if y0 == y1 else 1
        i, j = min(x0, x1), min(y0, y1)
        quad = corners_by_elem[qid]
        na, nb = quad[s], quad[(s + 1) % 4]
        lo = na if (x0, y0) <= (x1, y1) else nb
        hi = nb if lo == na else na
        eid = mesh._new_edge((lo, hi), 0, (qid, 0, axis, i, j, 1), None, None, boundary)
        edge_of_pair[pair] = eid
    return edge_of_pair


def load_mesh(document: dict) -> TMesh:
    """Build a TMesh from a mesh document (see package docs for the format).

    Initial documents carry nodes and CCW element quadruples; refined
    documents additionally carry full edge and element lineage, which is
    restored verbatim.
    """
    degree = document.get("degree", 1)
    mesh = TMesh(degree)

    raw_nodes = document.get("nodes")
    raw_elems = document.get("elements")
    if raw_nodes is None or raw_elems is None:
        raise MeshError("document must contain nodes and elements")

    ids = [n["id"] for n in raw_nodes]
    if len(ids) != len(set(ids)):
        raise MeshError("duplicate node id")
    known = set(ids)

    seen_quads = set()
    corners_by_elem = {}
    for qidx, quad in enumerate(raw_elems):
        if len(quad) != 4 or len(set(quad)) != 4:
            raise MeshError(f"element {qidx} is degenerate")
        for nid in quad:
            if nid not in known:
                raise MeshError(f"element {qidx} references undefined node {nid}")
        key = frozenset(quad)
        if key in seen_quads:
            raise MeshError(f"duplicate element {sorted(quad)}")
        seen_quads.add(key)
        corners_by_elem[qidx] = tuple(quad)

    # manifold and orientation checks on side pairs
    side_dirs: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for qid, quad in corners_by_elem.items():
        for s in range(4):
            a, b = quad[s], quad[(s + 1) % 4]
            side_dirs.setdefault((min(a, b), max(a, b)), []).append((a, b))
    for pair, dirs in side_dirs.items():
        if len(dirs) > 2:
            raise MeshError(f"non-manifold edge {pair}: {len(dirs)} incident elements")
        if len(dirs) == 2 and dirs[0] == dirs[1]:
            raise MeshError(f"inconsistent orientation across edge {pair}")

    mesh.topo = InitialTopology(corners_by_elem)

    pos = {n["id"]: (tuple(n["xy"]) if n.get("xy") is not None else None) for n in raw_nodes}

    if "edges" in document:
        return _load_refined(mesh, document, pos, corners_by_elem)

    boundary_pairs = {p for p, d in side_dirs.items() if len(d) == 1}
    boundary_nodes = set()
    for p in boundary_pairs:
        boundary_nodes.update(p)
    for nid in sorted(known):
        slots = mesh.topo.node_slots.get(nid)
        if slots is None:
            raise MeshError(f"node {nid} is not used by any element")
        e0, c0 = slots[0]
        x, y = corner_coord(c0, 1)
        gp = mesh.topo.canon_point(GridPoint(e0, 0, x, y))
        mesh.nodes[nid] = NodeRec(nid, gp, pos[nid], nid in boundary_nodes)
        mesh.node_elems[nid] = set()
        mesh.node_edges[nid] = set()
    mesh._next_node = max(known) + 1

    edge_of_pair = _derive_initial_edges(mesh, corners_by_elem)

    for qid in sorted(corners_by_elem):
        quad = corners_by_elem[qid]
        sides = []
        for s in range(4):
            a, b = quad[s], quad[(s + 1) % 4]
            sides.append([edge_of_pair[(min(a, b), max(a, b))]])
        got = mesh._new_element(quad, sides, (qid, 0, 0, 0, 0), None)
        assert got == qid

    mesh.ev_ids = _initial_evs(mesh)

    labels = document.get("direction_labels")
    if labels:
        for key, vals in labels.items():
            a, b = (int(t) for t in key.split("-"))
            eid = edge_of_pair.get((min(a, b), max(a, b)))
            if eid is None:
                raise MeshError(f"direction label for unknown edge {key}")
            mesh.edges[eid].di = tuple(sorted(set(vals)))
    return mesh


def _initial_evs(mesh: TMesh) -> list[int]:
    evs = []
    for nid in sorted(mesh.nodes):
        v = len(mesh.node_elems[nid])
        if mesh.nodes[nid].boundary:
            if v > 2:
                evs.append(nid)
        elif v != 4:
            evs.append(nid)
    return evs


def _load_refined(mesh, document, pos, corners_by_elem):
    for raw in document["nodes"]:
        nid = raw["id"]
        gp = GridPoint(*raw["gp"])
        rec = NodeRec(nid, gp, pos[nid], raw.get("boundary", False))
        mesh.nodes[nid] = rec
        mesh.node_elems[nid] = set()
        mesh.node_edges[nid] = set()
    for raw in document["edges"]:
        di = tuple(raw["di"]) if raw.get("di") is not None else None
        rec = EdgeRec(raw["id"], tuple(raw["nodes"]), raw["level"], tuple(raw["host"]),
                      di, raw.get("parent"),
                      tuple(raw["children"]) if raw.get("children") else None,
                      raw["active"], raw.get("boundary", False))
        mesh.edges[rec.id] = rec
        mesh.edge_elems[rec.id] = set()
        if rec.active:
            for n in rec.nodes:
                mesh.node_edges[n].add(rec.id)
    for raw in document["element_records"]:
        rec = ElementRec(raw["id"], tuple(raw["corners"]),
                         [list(s) for s in raw["sides"]], tuple(raw["rect"]),
                         raw.get("parent"),
                         tuple(raw["children"]) if raw.get("children") else None,
                         raw["active"])
        mesh.elements[rec.id] = rec
        if rec.active:
            for n in mesh.element_node_ids(rec):
                mesh.node_elems[n].add(rec.id)
            for eid in mesh.element_edge_ids(rec):
                mesh.edge_elems[eid].add(rec.id)
    mesh.ev_ids = list(document.get("ev_ids", []))
    mesh.aux_nodes = set(document.get("aux_nodes", []))
    mesh._next_node = max(mesh.nodes) + 1
    mesh._next_edge = max(mesh.edges) + 1
    mesh._next_elem = max(mesh.elements) + 1
    return mesh


def save_doc(mesh: TMesh) -> dict:
    """Serializable document with full lineage, canonically ordered."""
    nodes = []
    for nid in sorted(mesh.nodes):
        n = mesh.nodes[nid]
        nodes.append({"id": n.id, "xy": list(n.xy) if n.xy else None,
                      "gp": list(n.gp), "boundary": n.boundary})
    edges = []
    for eid in sorted(mesh.edges):
        e = mesh.edges[eid]
        edges.append({"id": e.id, "nodes": list(e.nodes), "level": e.level,
                      "di": list(e.di) if e.di is not None else None,
                      "parent": e.parent,
                      "children": list(e.children) if e.children else None,
                      "active": e.active, "boundary": e.boundary,
                      "host": list(e.host)})
    elems = []
    initial = []
    for qid in sorted(mesh.elements):
        q = mesh.elements[qid]
        if q.parent is None:
            initial.append(list(q.corners))
        elems.append({"id": q.id, "corners": list(q.corners),
                      "sides": [list(s) for s in q.sides], "rect": list(q.rect),
                      "parent": q.parent,
                      "children": list(q.children) if q.children else None,
                      "active": q.active})
    doc = {
        "degree": mesh.degree,
        "nodes": nodes,
        "elements": initial,
        "edges": edges,
        "element_records": elems,
        "ev_ids": list(mesh.ev_ids),
        "aux_nodes": sorted(mesh.aux_nodes),
    }
    labels = {}
    for e in mesh.edges.values():
        if e.parent is None and e.di is not None:
            a, b = sorted(e.nodes)
            labels[f"{a}-{b}"] = list(e.di)
    if labels:
        doc["direction_labels"] = {k: labels[k] for k in sorted(labels)}
    return doc


def dumps_canonical(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


# ---------------------------------------------------------------- validation


def validate_regular(mesh: TMesh) -> dict:
    """Structural report for an initial mesh.

    Checks element closures, pairwise closure intersections, separation of
    extraordinary-node p-disks, and that every anchor's (p+1)/2-disk flattens
    to a rectangle patchwork. Violations are collected, never raised.
    """
    if any(not q.active for q in mesh.elements.values()):
        raise MeshError("validate_regular expects an unrefined mesh")
    violations = []
    closures = {}
    for qid in mesh.active_elements():
        q = mesh.elements[qid]
        edges = mesh.element_edge_ids(q)
        nodes = mesh.element_node_ids(q)
        if len(edges) != 4 or len(nodes) != 4:
            violations.append({"check": "element-closure", "element": qid,
                               "detail": f"{len(edges)} edges, {len(nodes)} nodes"})
        closures[qid] = (set(nodes), set(edges))
    qids = sorted(closures)
    for a_i, qa in enumerate(qids):
        for qb in qids[a_i + 1:]:
            na, ea = closures[qa]
            nb, eb = closures[qb]
            sn = len(na & nb)
            se = len(ea & eb)
            ok = (sn == 0 and se == 0) or (se == 1 and sn == 2) or (se == 0 and sn == 1)
            if not ok:
                violations.append({"check": "pairwise-closure", "elements": [qa, qb],
                                   "detail": f"{se} shared edges, {sn} shared nodes"})
    p = mesh.degree
    disks = {ev: mesh.k_disk(ev, p) for ev in mesh.ev_ids}
    evs = sorted(disks)
    for a_i, va in enumerate(evs):
        for vb in evs[a_i + 1:]:
            inter = disks[va] & disks[vb]
            if inter:
                violations.append({"check": "ev-separation", "nodes": [va, vb],
                                   "detail": f"p-disks share {len(inter)} elements"})
    half = (p + 1) // 2
    excluded = set()
    for ev in mesh.ev_ids:
        dom = mesh.k_disk(ev, half)
        for nid in mesh.nodes:
            if mesh.node_elems[nid] and mesh.node_elems[nid] <= dom:
                excluded.add(nid)
    for nid in sorted(mesh.nodes):
        if nid in excluded:
            continue
        disk = mesh.k_disk(nid, half)
        if flatten_elements(mesh, nid, disk) is None:
            violations.append({"check": "anchor-disk-structured", "node": nid,
                               "detail": "disk does not flatten consistently"})
    return {"status": "pass" if not violations else "fail", "violations": violations}


def classify_nodes(mesh: TMesh) -> dict[int, dict]:
    out = {}
    for nid in sorted(mesh.nodes):
        out[nid] = {"class": mesh.classify_node(nid), "valence": mesh.valence(nid),
                    "boundary": mesh.nodes[nid].boundary}
    return out


# ----------------------------------------------------------- chart placement


def rep_in(topo: InitialTopology, gp: GridPoint, target: int):
    """Coordinates of gp inside the target initial element, or None."""
    gp = normalize(gp)
    n = 1 << gp.level
    for e, i, j in topo.reps(gp.elem, gp.i, gp.j, n):
        if e == target:
            return (i, j, gp.level)
    return None


_ROT = ((1, 0, 0, 1), (0, -1, 1, 0), (-1, 0, 0, -1), (0, 1, -1, 0))


def _apply_rot(r, x, y):
    a, b, c, d = _ROT[r]
    return (a * x + b * y, c * x + d * y)


def placement_from_edge(mesh: TMesh, eid: int, placed_xy: dict[int, tuple[float, float]],
                        target_elem: int):
    """Rigid placement (rot, translation) of target element's host frame into
    chart coordinates, derived from the chart positions of a shared edge's
    endpoints."""
    e = mesh.edges[eid]
    na, nb = e.nodes
    pa, pb = placed_xy[na], placed_xy[nb]
    host = mesh.elements[target_elem].rect[0]
    ra = rep_in(mesh.topo, mesh.nodes[na].gp, host)
    rb = rep_in(mesh.topo, mesh.nodes[nb].gp, host)
    if ra is None or rb is None:
        return None
    lv = max(ra[2], rb[2])
    ax, ay = ra[0] << (lv - ra[2]), ra[1] << (lv - ra[2])
    bx, by = rb[0] << (lv - rb[2]), rb[1] << (lv - rb[2])
    scale = 1.0 / (1 << lv)
    vx, vy = (bx - ax) * scale, (by - ay) * scale
    wx, wy = pb[0] - pa[0], pb[1] - pa[1]
    for r in range(4):
        tx, ty = _apply_rot(r, vx, vy)
        if abs(tx - wx) < 1e-12 and abs(ty - wy) < 1e-12:
            ox, oy = _apply_rot(r, ax * scale, ay * scale)
            return (r, pa[0] - ox, pa[1] - oy)
    return None


def place_point(placement, x, y):
    r, tx, ty = placement
    px, py = _apply_rot(r, x, y)
    return (px + tx, py + ty)


def element_chart_rect(mesh: TMesh, qid: int, placement):
    h, a, b, i, j = mesh.elements[qid].rect
    wa, wb = 1.0 / (1 << a), 1.0 / (1 << b)
    corners = [(i * wa, j * wb), ((i + 1) * wa, j * wb),
               ((i + 1) * wa, (j + 1) * wb), (i * wa, (j + 1) * wb)]
    pts = [place_point(placement, x, y) for x, y in corners]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return (min(xs), min(ys), max(xs), max(ys))


def flatten_elements(mesh: TMesh, origin_node: int, elems: set[int]):
    """Lay the given element set flat around origin_node.

    Returns {elem: placement} and node chart positions, or None if any element
    receives two conflicting placements (the set is not structured).
    """
    if not elems:
        return {}, {}
    start = min(q for q in elems if origin_node in mesh.element_node_ids(mesh.elements[q]))
    host = mesh.elements[start].rect[0]
    org = rep_in(mesh.topo, mesh.nodes[origin_node].gp, host)
    if org is None:
        return None
    lv = org[2]
    scale = 1.0 / (1 << lv)
    placements = {start: (0, -org[0] * scale, -org[1] * scale)}
    node_xy = {}

    def record_nodes(qid):
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

    if not record_nodes(start):
        return None
    queue = [start]
    while queue:
        qid = queue.pop()
        q = mesh.elements[qid]
        for s in range(4):
            for eid in q.sides[s]:
                for nqid in mesh.edge_elems[eid]:
                    if nqid == qid or nqid not in elems:
                        continue
                    pl = placement_from_edge(mesh, eid, node_xy, nqid)
                    if pl is None:
                        return None
                    if nqid in placements:
                        if placements[nqid] != pl:
                            return None
                        continue
                    placements[nqid] = pl
                    if not record_nodes(nqid):
                        return None
                    queue.append(nqid)
    if set(placements) != set(elems):
        return None
    return placements, node_xy


# ------------------------------------------------------------------- rebase


def uniform_refine_rebase(mesh: TMesh) -> TMesh:
    """Split every element in four and reissue the result as a fresh initial
    mesh (levels reset to zero, labels recomputed by the caller)."""
    if any(not q.active for q in mesh.elements.values()):
        raise MeshError("rebase expects an unrefined mesh")
    next_id = max(mesh.nodes) + 1
    mid_of_pair = {}
    nodes = []
    for nid in sorted(mesh.nodes):
        n = mesh.nodes[nid]
        nodes.append({"id": nid, "xy": list(n.xy) if n.xy else None})

    def node_xy(nid):
        return mesh.nodes[nid].xy

    def midpoint(a, b):
        nonlocal next_id
        key = (min(a, b), max(a, b))
        got = mid_of_pair.get(key)
        if got is not None:
            return got
        xy = None
        if node_xy(a) is not None and node_xy(b) is not None:
            xy = [(node_xy(a)[0] + node_xy(b)[0]) / 2.0,
                  (node_xy(a)[1] + node_xy(b)[1]) / 2.0]
        nid = next_id
        next_id += 1
        nodes.append({"id": nid, "xy": xy})
        mid_of_pair[key] = nid
        return nid

    elements = []
    for qid in sorted(mesh.elements):
        q = mesh.elements[qid]
        c = q.corners
        mids = [midpoint(c[s], c[(s + 1) % 4]) for s in range(4)]
        xy = None
        if all(node_xy(n) is not None for n in c):
            xy = [sum(node_xy(n)[0] for n in c) / 4.0,
                  sum(node_xy(n)[1] for n in c) / 4.0]
        center = next_id
        next_id += 1
        nodes.append({"id": center, "xy": xy})
        for s in range(4):
            elements.append([c[s], mids[s], center, mids[(s + 3) % 4]])

    doc = {"degree": mesh.degree, "nodes": nodes, "elements": elements}
    out = load_mesh(doc)
    if sorted(out.ev_ids) != sorted(mesh.ev_ids):
        raise MeshError("rebase changed the extraordinary node set")
    if any(e.di is not None for e in mesh.edges.values()):
        from .direction import compute_direction_labeling
        report = compute_direction_labeling(out)
        if report["status"] != "ok":
            raise MeshError("rebase could not recompute direction labels")
    return out
