"""Extraction of the coarsest partition on which all spline pieces are
polynomial, together with the inter-element smoothness map.

The partition is obtained in ceil(p/2) sweeps: sweep j splits, through every
hanging node laid down before it, the enclosing element, by bisecting the
full side facing that node. The bisection midpoints are tagged with the sweep
that created them, so each joint line grows by one cell per sweep. Tagged
nodes are auxiliary: they are not part of the source mesh, their joints carry
full smoothness, and a second run of the extraction leaves the result
untouched.
"""

from __future__ import annotations

import heapq

from .mesh import MeshError, TMesh


def _side_of(bm: TMesh, q, nid: int) -> int | None:
    for s in range(4):
        if len(q.sides[s]) == 2:
            e1, e2 = (bm.edges[x] for x in q.sides[s])
            if nid in e1.nodes and nid in e2.nodes:
                return s
    return None


def bezier_mesh(mesh: TMesh) -> tuple[TMesh, dict]:
    """Return (partition mesh, info).

    info carries `ext1`: for every source-mesh hanging node processed here,
    the ids of the joint edges created through it (one per neighbor element
    that split). These seed the extension computations.
    """
    p = mesh.degree
    bm = mesh.copy()
    start_nodes = bm._next_node
    prior_aux = set(bm.aux_nodes)
    tag: dict[int, int] = {}
    ext1: dict[int, list[int]] = {}
    sweeps = []

    for sweep in range(1, (p + 1) // 2 + 1):
        heap = sorted(bm.active_elements())
        queued = set(heap)
        performed = 0
        while heap:
            qid = heapq.heappop(heap)
            queued.discard(qid)
            q = bm.elements[qid]
            if not q.active:
                continue
            edges = bm.element_edge_ids(q)
            nodes = bm.element_node_ids(q)
            if len(edges) != len(nodes) or not 4 <= len(edges) <= 6:
                raise MeshError(
                    f"element {qid} has {len(edges)} edges and {len(nodes)} nodes; "
                    "input is not refinement-generated")
            hanging = [n for n in nodes if n not in q.corners
                       and n not in prior_aux and tag.get(n, 0) < sweep]
            if not hanging:
                continue
            nu = min(hanging)
            s = _side_of(bm, q, nu)
            if s is None:
                raise MeshError(f"node {nu} hangs irregularly on element {qid}")
            opp = q.sides[(s + 2) % 4]
            if len(opp) != 1:
                raise MeshError(f"element {qid} lacks a full side facing node {nu}")
            res = bm.subdivide_edge(opp[0])
            performed += 1
            for nid in res["nodes"]:
                tag[nid] = sweep
            bm.aux_nodes.update(res["nodes"])
            for conn in res["edges"][2:]:
                e = bm.edges[conn]
                for nid in e.nodes:
                    if nid < start_nodes and nid not in prior_aux:
                        ext1.setdefault(nid, []).append(conn)
            # children of split elements and neighbors of new edges may still
            # hold eligible hanging nodes; requeue them
            recheck = set()
            for sid in res["split_elements"]:
                recheck.update(bm.elements[sid].children or ())
            for eid in res["edges"]:
                recheck.update(bm.edge_elems.get(eid, ()))
            for rid in recheck:
                if bm.elements[rid].active and rid not in queued:
                    heapq.heappush(heap, rid)
                    queued.add(rid)
        sweeps.append(performed)

    return bm, {"ext1": ext1, "sweeps": sweeps}


def active_descendants(bm: TMesh, eid: int) -> list[int]:
    out = []
    stack = [eid]
    while stack:
        cur = stack.pop()
        e = bm.edges[cur]
        if e.active:
            out.append(cur)
        elif e.children:
            stack.extend(e.children)
    return sorted(out)


def continuity_map(bm: TMesh) -> dict[int, int]:
    """Smoothness order k(E) across each active edge of the partition mesh:
    p-1 everywhere except near extraordinary nodes, where the prolongation of
    their edge stars (order p-1) drops the coupling to 0."""
    p = bm.degree
    zero = set()
    for ev in bm.ev_ids:
        star = set(bm.node_edges.get(ev, ()))
        if star:
            zero.update(bm.edge_prolongation(star, p - 1))
    return {eid: (0 if eid in zero else p - 1) for eid in bm.active_edges()}
