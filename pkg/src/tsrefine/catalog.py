"""Built-in example meshes.

Each entry is a plain document dict accepted by `load_mesh`. Node ids count
row-major from zero; coordinates are only used for plotting and for the
position-based mark selectors.
"""

from __future__ import annotations


def grid_doc(nx: int, ny: int) -> dict:
    """nx x ny unit squares."""
    if nx < 1 or ny < 1:
        raise ValueError("grid needs at least one cell per direction")
    nodes = []
    for j in range(ny + 1):
        for i in range(nx + 1):
            nodes.append({"id": j * (nx + 1) + i, "xy": [float(i), float(j)]})
    elements = []
    for j in range(ny):
        for i in range(nx):
            n0 = j * (nx + 1) + i
            elements.append([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    return {"nodes": nodes, "elements": elements}


def _cells_doc(cells: list[tuple[int, int]]) -> dict:
    """Mesh from a set of unit cells on the integer lattice."""
    cells = sorted(set(cells))
    ids: dict[tuple[int, int], int] = {}
    nodes = []

    def nid(x, y):
        if (x, y) not in ids:
            ids[(x, y)] = len(nodes)
            nodes.append({"id": len(nodes), "xy": [float(x), float(y)]})
        return ids[(x, y)]

    elements = []
    for x, y in cells:
        elements.append([nid(x, y), nid(x + 1, y), nid(x + 1, y + 1), nid(x, y + 1)])
    return {"nodes": nodes, "elements": elements}


def lshape_doc() -> dict:
    """Three unit squares in an L; the reflex corner is an extraordinary
    boundary node of valence 3."""
    return _cells_doc([(0, 0), (1, 0), (0, 1)])


def plus_doc() -> dict:
    """Five squares in a plus. All four reflex corners are extraordinary and
    their 1-disks share the central element, so degree-1 validation fails."""
    return _cells_doc([(1, 0), (0, 1), (1, 1), (2, 1), (1, 2)])


def fan_doc(k: int, m: int) -> dict:
    """k sectors of m x m cells glued around a central interior node.

    For k != 4 the center is an interior extraordinary node of valence k.
    Sector s spans spokes s and s+1; its rows glue to the neighbor sector's
    columns, so the whole fan is a closed disk with one interior star point.
    """
    if k < 3 or m < 1:
        raise ValueError("fan needs k >= 3 sectors and m >= 1 rings")
    import math
    ids: dict[tuple, int] = {}
    nodes = []

    def canon(s, i, j):
        # center and spoke gluing: (s,0,0) ~ center, (s,0,j) ~ (s+1 mod k,j,0)
        if i == 0 and j == 0:
            return ("c",)
        if i == 0:
            return ((s + 1) % k, j, 0)
        return (s, i, j)

    def xy(s, i, j):
        t0 = 2.0 * math.pi * s / k
        t1 = 2.0 * math.pi * ((s + 1) % k) / k
        return (i * math.cos(t0) + j * math.cos(t1),
                i * math.sin(t0) + j * math.sin(t1))

    def nid(s, i, j):
        key = canon(s, i, j)
        if key not in ids:
            ids[key] = len(nodes)
            px, py = xy(s, i, j)
            nodes.append({"id": len(nodes), "xy": [round(px, 12), round(py, 12)]})
        return ids[key]

    elements = []
    for s in range(k):
        for i in range(m):
            for j in range(m):
                elements.append([nid(s, i, j), nid(s, i + 1, j),
                                 nid(s, i + 1, j + 1), nid(s, i, j + 1)])
    return {"nodes": nodes, "elements": elements}


def ring_doc(c: int, m: int, r0: float = 3.0) -> dict:
    """Annulus of c x m cells: c around, m radially, glued into a loop.

    Every interior node is regular; the around-going edge strands close into
    loops, so the mesh is covered by structured submeshes without being one.
    """
    if c < 3 or m < 1:
        raise ValueError("ring needs c >= 3 columns and m >= 1 rows")
    import math
    nodes = []
    for j in range(m + 1):
        for i in range(c):
            t = 2.0 * math.pi * i / c
            r = r0 + j
            nodes.append({"id": j * c + i,
                          "xy": [round(r * math.cos(t), 12),
                                 round(r * math.sin(t), 12)]})
    elements = []
    for j in range(m):
        for i in range(c):
            i2 = (i + 1) % c
            elements.append([j * c + i, j * c + i2,
                             (j + 1) * c + i2, (j + 1) * c + i])
    return {"nodes": nodes, "elements": elements}


def twisted_strip_doc() -> dict:
    """Four quads closed into a loop with a quarter twist.

    Orientable and manifold, but its edge strands knot together: one class
    meets itself across an element, so no strict direction labeling exists.
    The attached generalized labels are admissible.
    """
    nodes = [{"id": n, "xy": [float(n % 4), float(n // 4)]} for n in range(8)]
    elements = [
        [0, 1, 5, 4],
        [1, 2, 6, 5],
        [2, 3, 7, 6],
        [3, 1, 0, 7],
    ]
    labels = {
        "0-1": [5], "4-5": [5],
        "0-4": [2], "1-5": [2, 3], "2-6": [3, 4], "3-7": [4, 5],
        "1-2": [0], "5-6": [0], "2-3": [0], "6-7": [0],
        "1-3": [7], "0-7": [7],
    }
    return {"nodes": nodes, "elements": elements, "direction_labels": labels}


CATALOG = {
    "grid3": lambda: grid_doc(3, 3),
    "grid4": lambda: grid_doc(4, 4),
    "lshape": lshape_doc,
    "plus": plus_doc,
    "fan5": lambda: fan_doc(5, 5),
    "ring": lambda: ring_doc(12, 4),
    "twisted-strip": twisted_strip_doc,
}
