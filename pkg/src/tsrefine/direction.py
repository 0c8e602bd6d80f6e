"""Direction labeling of mesh edges.

A labeling assigns each edge a set of direction indices. Inside every element,
edges on opposite sides must carry compatible (overlapping) index sets while
edges meeting at a corner must carry strictly separated sets. Plain strict
labelings use singleton sets; set-valued labels cover meshes that admit no
strict labeling on their own but do so chartwise.
"""

from __future__ import annotations

from .mesh import MeshError, TMesh


def di_lt(a, b) -> bool:
    """Strictly below: every index in a is smaller than every index in b."""
    return max(a) < min(b)


def di_gt(a, b) -> bool:
    return min(a) > max(b)


def di_overlap(a, b) -> bool:
    return not di_lt(a, b) and not di_gt(a, b)


def _element_groups(mesh: TMesh, q) -> tuple[list[int], list[int]]:
    """Edge ids grouped by side pair: (sides 0 and 2, sides 1 and 3)."""
    u = list(q.sides[0]) + list(q.sides[2])
    v = list(q.sides[1]) + list(q.sides[3])
    return u, v


def compute_direction_labeling(mesh: TMesh) -> dict:
    """Greedy strict labeling of an unrefined mesh.

    Edges on opposite sides of an element must receive equal indices, so the
    opposite-pair relation is closed under union-find first; the resulting
    classes are then colored in ascending class order (class id = smallest
    contained edge id) with the least index not used by an adjacent class.

    A class that is adjacent to itself admits no strict labeling at all; the
    report flags the mesh as totally unstructured and leaves labels unset.
    """
    if any(not q.active for q in mesh.elements.values()):
        raise MeshError("labeling expects an unrefined mesh")

    parent: dict[int, int] = {eid: eid for eid in mesh.active_edges()}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            parent[rb] = ra

    for qid in mesh.active_elements():
        u, v = _element_groups(mesh, mesh.elements[qid])
        for group in (u, v):
            for a, b in zip(group, group[1:]):
                union(a, b)

    classes: dict[int, list[int]] = {}
    for eid in parent:
        classes.setdefault(find(eid), []).append(eid)

    adj: dict[int, set[int]] = {c: set() for c in classes}
    self_adjacent = []
    for qid in mesh.active_elements():
        u, v = _element_groups(mesh, mesh.elements[qid])
        for ea in u:
            for eb in v:
                ca, cb = find(ea), find(eb)
                if ca == cb:
                    self_adjacent.append({"element": qid, "edges": [ea, eb]})
                else:
                    adj[ca].add(cb)
                    adj[cb].add(ca)

    if self_adjacent:
        return {"status": "totally-unstructured", "witnesses": self_adjacent,
                "classes": len(classes)}

    color: dict[int, int] = {}
    for c in sorted(classes):
        used = {color[n] for n in adj[c] if n in color}
        k = 0
        while k in used:
            k += 1
        color[c] = k

    for eid in parent:
        mesh.edges[eid].di = (color[find(eid)],)
    return {"status": "ok", "classes": len(classes),
            "indices": 1 + max(color.values()) if color else 0}


def validate_labeling(mesh: TMesh, kind: str = "strict") -> dict:
    """Check a labeling against the per-element compatibility rules.

    strict: singleton labels, equal along each side pair, distinct across
    side pairs. generalized: side-pair groups overlap pairwise, and any two
    edges from different groups are strictly separated.
    """
    if kind not in ("strict", "generalized"):
        raise MeshError(f"unknown labeling kind {kind!r}")
    violations = []
    for eid in mesh.active_edges():
        e = mesh.edges[eid]
        if e.di is None:
            violations.append({"edge": eid, "detail": "unlabeled edge"})
        elif kind == "strict" and len(e.di) != 1:
            violations.append({"edge": eid, "detail": f"non-singleton label {list(e.di)}"})
    if violations:
        return {"status": "fail", "violations": violations}

    for qid in mesh.active_elements():
        q = mesh.elements[qid]
        u, v = _element_groups(mesh, q)
        for group in (u, v):
            for i, ea in enumerate(group):
                for eb in group[i + 1:]:
                    da, db = mesh.edges[ea].di, mesh.edges[eb].di
                    ok = da == db if kind == "strict" else di_overlap(da, db)
                    if not ok:
                        violations.append({
                            "element": qid, "edges": [ea, eb],
                            "detail": f"parallel labels {list(da)} vs {list(db)}"})
        for ea in u:
            for eb in v:
                da, db = mesh.edges[ea].di, mesh.edges[eb].di
                ok = da != db if kind == "strict" else (di_lt(da, db) or di_gt(da, db))
                if not ok:
                    violations.append({
                        "element": qid, "edges": [ea, eb],
                        "detail": f"crossing labels {list(da)} vs {list(db)} not separated"})
    return {"status": "pass" if not violations else "fail", "violations": violations}


def check_label_lineage(mesh: TMesh) -> dict:
    """Labels must be inherited unchanged along the refinement history."""
    violations = []
    for e in mesh.edges.values():
        if e.parent is not None:
            pd = mesh.edges[e.parent].di
            if pd != e.di:
                violations.append({"edge": e.id, "parent": e.parent,
                                   "detail": f"{e.di} != parent {pd}"})
    return {"status": "pass" if not violations else "fail", "violations": violations}
