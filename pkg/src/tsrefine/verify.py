"""Property checks over meshes, refinement traces, and assembled bases.

Every check returns a plain dict report:

    {"check": <name>, "status": "pass" | "fail", "violations": [...], ...}

Violations carry the ids involved and the instantiated inequality, so a
failing report is enough to reproduce the offending comparison by hand.
"""

from __future__ import annotations

import math
import random
from fractions import Fraction

import numpy as np

from .basis import Basis, assemble_basis
from .bezier import active_descendants, bezier_mesh, continuity_map
from .direction import di_lt
from .mesh import MeshError, TMesh, edge_endpoint_gps, rep_in
from .refine import RefineTrace, locality_constant


def _require_labels(mesh: TMesh):
    for eid in mesh.active_edges():
        if mesh.edges[eid].di is None:
            raise MeshError(f"edge {eid} carries no direction index")


# ------------------------------------------------------------ quasi-uniform


def check_quasi_uniformity(mesh: TMesh) -> dict:
    """Level spread over each edge neighborhood, split by direction order.

    For E' in the neighborhood of E:
      di(E') < di(E):  l(E)     <= l(E') <= l(E) + 1
      same direction:  l(E) - 1 <= l(E') <= l(E) + 1
      di(E') > di(E):  l(E) - 1 <= l(E') <= l(E)
    """
    _require_labels(mesh)
    violations = []
    checked = 0
    for eid in sorted(mesh.active_edges()):
        cached = mesh._qu_cache.get(eid)
        if cached is None:
            cached = []
            e = mesh.edges[eid]
            for oid in sorted(mesh.edge_neighborhood(eid)):
                if oid == eid:
                    continue
                o = mesh.edges[oid]
                if di_lt(o.di, e.di):
                    lo, hi, case = e.level, e.level + 1, "di<"
                elif di_lt(e.di, o.di):
                    lo, hi, case = e.level - 1, e.level, "di>"
                else:
                    lo, hi, case = e.level - 1, e.level + 1, "di="
                if not lo <= o.level <= hi:
                    cached.append({
                        "edge": eid, "other": oid, "case": case,
                        "inequality": f"{lo} <= l({oid})={o.level} <= {hi}"})
            mesh._qu_cache[eid] = cached
        violations.extend(cached)
        checked += 1
    return {"check": "quasi-uniformity", "status": "pass" if not violations else "fail",
            "edges_checked": checked, "violations": violations}


# ----------------------------------------------------------------- locality


def check_locality(trace: RefineTrace, mesh: TMesh) -> dict:
    """Every edge produced by a mark must sit within C1 * 2^-l of the mark
    and at most one level deeper than it."""
    p = mesh.degree
    violations = []
    produced_total = 0
    for rec in trace.records:
        if rec["absorbed"] or not rec["produced"]:
            continue
        K = max(1, rec["K"])
        c1 = locality_constant(p, K)
        ml = rec["mark_level"]
        for pid, lvl, dist in rec["produced"]:
            produced_total += 1
            bound = c1 * 2.0 ** (-lvl)
            if not dist < bound:
                violations.append({
                    "mark": rec["mark"], "edge": pid,
                    "inequality": f"dist={dist} < {c1:.6f}*2^-{lvl}={bound:.6g}"})
            if not lvl <= ml + 1:
                violations.append({
                    "mark": rec["mark"], "edge": pid,
                    "inequality": f"l({pid})={lvl} <= l({rec['mark']})+1={ml + 1}"})
    return {"check": "locality", "status": "pass" if not violations else "fail",
            "marks": trace.marks, "produced": produced_total,
            "violations": violations}


# --------------------------------------------------------------- complexity


def check_complexity_ratio(trace: RefineTrace, ceiling: int = 64,
                           window: int = 50) -> dict:
    """Prefix ratios (#edges_j - #edges_0) / j stay under the ceiling and the
    running maximum gains nothing over the last `window` marks."""
    violations = []
    ratios = []
    e0 = trace.edges_initial
    for j, rec in enumerate(trace.records, start=1):
        r = Fraction(rec["edges_active"] - e0, j)
        ratios.append(r)
        if r > ceiling:
            violations.append({
                "prefix": j,
                "inequality": f"({rec['edges_active']}-{e0})/{j}={float(r):.3f} <= {ceiling}"})
    stabilized = None
    if len(ratios) > window:
        head = max(ratios[:-window])
        full = max(ratios)
        stabilized = head == full
        if not stabilized:
            violations.append({
                "prefix": len(ratios),
                "inequality": f"max ratio grew within the last {window} marks: "
                              f"{float(head):.3f} -> {float(full):.3f}"})
    peak = float(max(ratios)) if ratios else 0.0
    return {"check": "complexity-ratio", "status": "pass" if not violations else "fail",
            "marks": len(ratios), "peak_ratio": peak, "ceiling": ceiling,
            "stabilized": stabilized, "violations": violations}


# --------------------------------------------------- analysis suitability


def _hanging_nodes(mesh: TMesh) -> dict[int, int]:
    """node id -> an element it hangs on, for all active hanging nodes."""
    out = {}
    for qid in mesh.active_elements():
        q = mesh.elements[qid]
        for nid in mesh.element_node_ids(q):
            if nid not in q.corners:
                out[nid] = qid
    return out


def _skeleton_di(mesh: TMesh, nid: int):
    """Direction index of the edge line a hanging node sits on: the index
    shared by (at least) two of its incident edges."""
    seen = {}
    for eid in sorted(mesh.node_edges.get(nid, ())):
        di = mesh.edges[eid].di
        if di in seen:
            return di
        seen[di] = eid
    return None


def check_analysis_suitability(mesh: TMesh) -> dict:
    """Extensions of hanging nodes with different direction indices must not
    share edges on the partition mesh."""
    _require_labels(mesh)
    p = mesh.degree
    hang = _hanging_nodes(mesh)
    try:
        bm, info = bezier_mesh(mesh)
    except MeshError as err:
        violations = []
        for qid in sorted(mesh.active_elements()):
            q = mesh.elements[qid]
            hnodes = [n for n in mesh.element_node_ids(q) if n not in q.corners]
            if len(hnodes) >= 2:
                violations.append({
                    "nodes": sorted(hnodes), "element": qid,
                    "inequality": "extension overlap: crossing hanging nodes "
                                  "on one element"})
        if not violations:
            violations.append({"inequality": f"partition extraction failed: {err}"})
        return {"check": "analysis-suitability", "status": "fail",
                "violations": violations}

    ext1 = info["ext1"]
    violations = []
    exts = {}
    indices = {}
    for nid in sorted(hang):
        if nid not in ext1:
            violations.append({
                "nodes": [nid],
                "inequality": "hanging node received no first-order extension"})
            continue
        seeds = set()
        for cid in ext1[nid]:
            seeds.update(active_descendants(bm, cid))
        exts[nid] = frozenset(bm.edge_prolongation(seeds, (p - 1) // 2))
        di = _skeleton_di(mesh, nid)
        if di is None:
            violations.append({
                "nodes": [nid],
                "inequality": "hanging node has no repeated direction index"})
            continue
        indices[nid] = di

    nodes = sorted(indices)
    same_index_overlaps = 0
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            shared = exts[a] & exts[b]
            if not shared:
                continue
            if indices[a] == indices[b]:
                same_index_overlaps += 1
                continue
            violations.append({
                "nodes": [a, b], "indices": [list(indices[a]), list(indices[b])],
                "shared_edges": sorted(shared),
                "inequality": f"ext({a}) n ext({b}) = {sorted(shared)} != {{}}"})
    return {"check": "analysis-suitability",
            "status": "pass" if not violations else "fail",
            "hanging_nodes": len(nodes),
            "same_index_overlaps": same_index_overlaps,
            "violations": violations}


# ------------------------------------------------------- linear independence


def _bez_ancestor(mesh: TMesh, bm: TMesh, qid: int) -> int:
    cur = qid
    while not (cur in mesh.elements and mesh.elements[cur].active):
        parent = bm.elements[cur].parent
        if parent is None:
            raise MeshError(f"partition element {qid} has no source ancestor")
        cur = parent
    return cur


def _bez_points(mesh: TMesh, bm: TMesh, n: int):
    """Per partition element: source ancestor and an n x n interior tensor
    grid written in the ancestor's local coordinates."""
    ticks = [(i + 1.0) / (n + 1.0) for i in range(n)]
    out = []
    for qid in sorted(bm.active_elements()):
        anc = _bez_ancestor(mesh, bm, qid)
        _, a, b, i, j = bm.elements[qid].rect
        _, A, B, I, J = mesh.elements[anc].rect
        uv = np.empty((n * n, 2))
        k = 0
        for tu in ticks:
            for tv in ticks:
                hx = (i + tu) / (1 << a)
                hy = (j + tv) / (1 << b)
                uv[k, 0] = hx * (1 << A) - I
                uv[k, 1] = hy * (1 << B) - J
                k += 1
        out.append((anc, uv))
    return out

def check_linear_independence(mesh: TMesh, basis: Basis | None = None,
                              tol: float = 1e-9) -> dict:
    """Rank of the collocation matrix over per-element interior tensor grids
    must equal the number of basis functions.

    The matrix is never materialised: its Gram is accumulated element by
    element, and eigenvalues too small for the Gram to resolve are refined by
    projecting the collocation columns onto their eigenvectors. The verdict
    uses singular values relative to the largest, with cutoff `tol`.
    """
    if basis is None:
        basis = assemble_basis(mesh)
    p = mesh.degree
    bm, _ = bezier_mesh(mesh)
    blocks = _bez_points(mesh, bm, p + 1)
    n = len(basis)
    npts = sum(len(uv) for _, uv in blocks)
    if npts < n:
        raise MeshError(f"{npts} collocation points for {n} functions")
    gram = np.zeros((n, n))
    cache = []
    for anc, uv in blocks:
        idx = basis.by_element.get(anc, [])
        if not idx:
            continue
        m = np.empty((len(idx), len(uv)))
        for row, fi in enumerate(idx):
            m[row] = basis.eval_many(fi, anc, uv)
        gram[np.ix_(idx, idx)] += m @ m.T
        cache.append((idx, m))
    w, vec = np.linalg.eigh(gram)
    if w[-1] <= 0.0:
        rank = 0
    else:
        smax = math.sqrt(w[-1])
        # sigma below 1e-5 * smax is beneath the Gram's own resolution;
        # re-measure those directions directly on the collocation columns
        gray = w < w[-1] * 1e-10
        rank = n - int(gray.sum())
        if gray.any():
            sub = vec[:, gray]
            proj = np.zeros((sub.shape[1], sub.shape[1]))
            for idx, m in cache:
                t = m.T @ sub[idx, :]
                proj += t.T @ t
            sv = np.sqrt(np.maximum(np.linalg.eigvalsh(proj), 0.0))
            rank += int((sv > tol * smax).sum())
    ok = rank == n
    violations = []
    if not ok:
        violations.append({"inequality": f"rank {rank} != {n} functions"})
    return {"check": "linear-independence", "status": "pass" if ok else "fail",
            "functions": n, "points": npts, "rank": rank,
            "violations": violations}


# ------------------------------------------------------- polynomial span


def _node_hull(mesh: TMesh, qid: int, rings: int) -> set[int]:
    """Nodes reachable from the element by `rings` node/element alternations."""
    nodes = set(mesh.element_node_ids(mesh.elements[qid]))
    for _ in range(rings - 1):
        elems = set()
        for nid in nodes:
            elems.update(mesh.node_elems.get(nid, ()))
        nxt = set(nodes)
        for q in elems:
            nxt.update(mesh.element_node_ids(mesh.elements[q]))
        if nxt == nodes:
            break
        nodes = nxt
    return nodes


def reproduction_eligible(mesh: TMesh, qid: int) -> bool:
    """True when the element is at least p rings away from every
    extraordinary node and every boundary node."""
    hull = _node_hull(mesh, qid, mesh.degree)
    if any(n in mesh.ev_ids for n in hull):
        return False
    return not any(mesh.nodes[n].boundary for n in hull)


def check_poly_reproduction(mesh: TMesh, basis: Basis | None = None,
                            element: int | None = None,
                            tol: float = 1e-9) -> dict:
    """Least-squares fit of every bi-degree-p monomial on one element."""
    if basis is None:
        basis = assemble_basis(mesh)
    p = mesh.degree
    if element is None:
        elig = [q for q in sorted(mesh.active_elements())
                if reproduction_eligible(mesh, q)]
        if not elig:
            raise MeshError("no element clear of extraordinary and boundary disks")
        element = elig[0]
    elif not reproduction_eligible(mesh, element):
        raise MeshError(f"element {element} is not clear of extraordinary "
                        f"and boundary disks")
    n = p + 2
    ticks = [(i + 0.5) / n for i in range(n)]
    uv = np.array([(tu, tv) for tu in ticks for tv in ticks])
    idx = basis.by_element.get(element, [])
    a = np.empty((len(idx), len(uv)))
    for row, fi in enumerate(idx):
        a[row] = basis.eval_many(fi, element, uv)
    violations = []
    worst = 0.0
    for da in range(p + 1):
        for db in range(p + 1):
            target = uv[:, 0] ** da * uv[:, 1] ** db
            coef, *_ = np.linalg.lstsq(a.T, target, rcond=None)
            res = float(np.max(np.abs(a.T @ coef - target)))
            worst = max(worst, res)
            if not res < tol:
                violations.append({
                    "element": element, "monomial": [da, db],
                    "inequality": f"residual {res:.3e} < {tol}"})
    return {"check": "poly-reproduction",
            "status": "pass" if not violations else "fail",
            "element": element, "functions": len(idx), "max_residual": worst,
            "violations": violations}


# --------------------------------------------------------------- smoothness


def check_smoothness(mesh: TMesh, basis: Basis | None = None,
                     max_edges: int | None = 80, seed: int = 0,
                     tol_deriv: float = 1e-8, tol_value: float = 1e-10) -> dict:
    """Cross-edge continuity of every basis function on the partition mesh.

    Along each interior partition edge the one-sided traces are degree-p
    polynomials in the scaled normal offset; their value and, where the
    continuity map allows, derivatives up to p-1 must agree.
    """
    if basis is None:
        basis = assemble_basis(mesh)
    p = mesh.degree
    bm, _ = bezier_mesh(mesh)
    kt = continuity_map(bm)
    interior = [eid for eid in sorted(bm.active_edges())
                if len(bm.edge_elems[eid]) == 2]
    if max_edges is not None and len(interior) > max_edges:
        rng = random.Random(seed)
        interior = sorted(rng.sample(interior, max_edges))

    # dyadic tangential samples keep every coordinate exactly representable,
    # so both sides evaluate at bit-identical points
    den = 1
    while den < 2 * (p + 1):
        den *= 2
    ts = [(2 * k + 1) / den for k in range(p + 1)]

    violations = []
    checked = 0
    for eid in interior:
        ga, gb = edge_endpoint_gps(bm.edges[eid].host)
        sides = []
        for qid in sorted(bm.edge_elems[eid]):
            anc = _bez_ancestor(mesh, bm, qid)
            _, A, B, Ia, Ja = mesh.elements[anc].rect
            host = mesh.elements[anc].rect[0]
            ra = rep_in(mesh.topo, ga, host)
            rb = rep_in(mesh.topo, gb, host)
            if ra is None or rb is None:
                raise MeshError(f"edge {eid} endpoints missing from element {qid}")
            # endpoints in the source-ancestor's local coordinates
            lax = ra[0] / (1 << ra[2]) * (1 << A) - Ia
            lay = ra[1] / (1 << ra[2]) * (1 << B) - Ja
            lbx = rb[0] / (1 << rb[2]) * (1 << A) - Ia
            lby = rb[1] / (1 << rb[2]) * (1 << B) - Ja
            if lax == lbx:
                axis, lfix = 0, lax
            elif lay == lby:
                axis, lfix = 1, lay
            else:
                raise MeshError(f"edge {eid} is not axis aligned in element {anc}")
            _, a, b, i, j = bm.elements[qid].rect
            if axis == 0:
                cc = (i + 0.5) / (1 << a) * (1 << A) - Ia
            else:
                cc = (j + 0.5) / (1 << b) * (1 << B) - Ja
            inward = 1 if cc > lfix else -1
            pts = [(lax + t * (lbx - lax), lay + t * (lby - lay)) for t in ts]
            sides.append((anc, axis, inward, pts))

        fns = sorted(set(basis.by_element.get(sides[0][0], [])) |
                     set(basis.by_element.get(sides[1][0], [])))
        orders = range(1) if kt[eid] == 0 else range(p)
        tol0 = tol_value if kt[eid] == 0 else tol_deriv
        for fi in fns:
            for m in orders:
                tol_m = tol0 if m == 0 else tol_deriv
                # the two inward normals point opposite ways
                flip = 1.0 if m % 2 == 0 else -1.0
                for ti in range(len(ts)):
                    one = []
                    for anc, axis, inward, pts in sides:
                        pu, pv = pts[ti]
                        one.append(basis.eval_one_sided(
                            fi, anc, pu, pv, axis, inward, m))
                    da, db = one[0], flip * one[1]
                    scale = max(1.0, abs(da), abs(db))
                    if abs(da - db) > tol_m * scale:
                        violations.append({
                            "edge": eid, "fn": fi, "order": m, "t": float(ts[ti]),
                            "inequality": f"|{da:.6e} - {db:.6e}| <= {tol_m}*{scale:.3g}"})
        checked += 1
    return {"check": "smoothness", "status": "pass" if not violations else "fail",
            "edges_checked": checked, "violations": violations}
