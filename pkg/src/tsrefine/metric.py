"""Virtual uniform-refinement geometry and the combinatorial mesh metric.

The initial mesh glues unit parameter squares along shared sides; neighbouring
squares meet with a relative rotation by a multiple of 90 degrees.  Every
refinement level lives on a dyadic grid inside those squares, so distances can
be measured by breadth-first search over the cells of a *virtual* uniform
refinement without ever materializing it.  Distance between two grid nodes is
the minimal number of vertex-connected cells joining them, scaled by the cell
size; on a flat uniform grid this reduces to the scaled Chebyshev distance.
"""

from __future__ import annotations

from typing import NamedTuple


class GridPoint(NamedTuple):
    """Dyadic point in (or on the boundary of) an initial element.

    ``(i, j)`` are integers in ``[0, 2**level]`` relative to the hosting
    initial element's unit parameter square.
    """

    elem: int
    level: int
    i: int
    j: int


def normalize(gp: GridPoint) -> GridPoint:
    """Reduce to the smallest level representing the same point."""
    elem, level, i, j = gp
    while level > 0 and i % 2 == 0 and j % 2 == 0:
        level -= 1
        i //= 2
        j //= 2
    return GridPoint(elem, level, i, j)


def lift(gp: GridPoint, level: int) -> GridPoint:
    """Re-express ``gp`` on the finer dyadic grid of the given level."""
    if level < gp.level:
        raise ValueError("cannot lift to a coarser level")
    f = 1 << (level - gp.level)
    return GridPoint(gp.elem, level, gp.i * f, gp.j * f)


def corner_coord(c: int, n: int) -> tuple[int, int]:
    return ((0, 0), (n, 0), (n, n), (0, n))[c]


def side_point(s: int, t: int, n: int) -> tuple[int, int]:
    """Point at parameter ``t`` (0..n) along side ``s`` (corner s -> s+1)."""
    if s == 0:
        return (t, 0)
    if s == 1:
        return (n, t)
    if s == 2:
        return (n - t, n)
    return (0, n - t)


def _side_param(i: int, j: int, n: int) -> tuple[int, int]:
    # Inverse of side_point for points strictly inside one side.
    if j == 0:
        return (0, i)
    if i == n:
        return (1, j)
    if j == n:
        return (2, n - i)
    return (3, n - j)


class InitialTopology:
    """Side-gluing tables of the initial mesh.

    Built once at load time and never mutated afterwards: the metric depends
    only on the initial mesh, not on the refinement state.
    """

    def __init__(self, corners: dict[int, tuple[int, int, int, int]]):
        self.corners = {e: tuple(q) for e, q in corners.items()}
        self.neighbor: dict[tuple[int, int], tuple[int, int] | None] = {}
        self.node_slots: dict[int, list[tuple[int, int]]] = {}
        by_pair: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for e in sorted(self.corners):
            quad = self.corners[e]
            for s in range(4):
                a, b = quad[s], quad[(s + 1) % 4]
                by_pair.setdefault((min(a, b), max(a, b)), []).append((e, s))
            for c, nid in enumerate(quad):
                self.node_slots.setdefault(nid, []).append((e, c))
        for owners in by_pair.values():
            if len(owners) == 1:
                self.neighbor[owners[0]] = None
            else:
                # load_mesh guarantees at most two owners with opposite
                # traversal before the topology is constructed
                self.neighbor[owners[0]] = owners[1]
                self.neighbor[owners[1]] = owners[0]

    def reps(self, elem: int, i: int, j: int, n: int) -> list[tuple[int, int, int]]:
        """All (elem, i, j) representations of one level-``log2 n`` grid node."""
        on_x = i == 0 or i == n
        on_y = j == 0 or j == n
        if not on_x and not on_y:
            return [(elem, i, j)]
        if on_x and on_y:
            c = {(0, 0): 0, (n, 0): 1, (n, n): 2, (0, n): 3}[(i, j)]
            nid = self.corners[elem][c]
            out = []
            for e2, c2 in self.node_slots[nid]:
                x, y = corner_coord(c2, n)
                out.append((e2, x, y))
            return out
        s, t = _side_param(i, j, n)
        nb = self.neighbor.get((elem, s))
        if nb is None:
            return [(elem, i, j)]
        e2, s2 = nb
        x, y = side_point(s2, n - t, n)
        return [(elem, i, j), (e2, x, y)]

    def canon_key(self, elem: int, i: int, j: int, n: int) -> tuple[int, int, int]:
        if 0 < i < n and 0 < j < n:
            return (elem, i, j)
        return min(self.reps(elem, i, j, n))

    def canon_point(self, gp: GridPoint) -> GridPoint:
        gp = normalize(gp)
        n = 1 << gp.level
        e, i, j = self.canon_key(gp.elem, gp.i, gp.j, n)
        return GridPoint(e, gp.level, i, j)

    def node_cells(self, elem: int, i: int, j: int, n: int) -> list[tuple[int, int, int]]:
        """Cells of the level grid incident to a grid node (as a corner)."""
        cells = []
        for e, x, y in self.reps(elem, i, j, n):
            for cx in (x - 1, x):
                if 0 <= cx < n:
                    for cy in (y - 1, y):
                        if 0 <= cy < n:
                            cells.append((e, cx, cy))
        if len(cells) > 4:
            # corner reps may enumerate the same cell only for degenerate
            # gluings; deduplicate defensively
            cells = list(dict.fromkeys(cells))
        return cells


class DistField:
    """Layered cell BFS from one source grid node at a fixed level.

    Expansion is incremental so the same field can serve queries with growing
    cutoffs; fields are cached by (source, level) because the metric is
    independent of the refinement state.
    """

    def __init__(self, topo: InitialTopology, src: GridPoint):
        self.topo = topo
        self.level = src.level
        self.n = 1 << src.level
        key = topo.canon_key(src.elem, src.i, src.j, self.n)
        self.node_steps: dict[tuple[int, int, int], int] = {key: 0}
        self.cell_layers: list[list[tuple[int, int, int]]] = []
        self._seen = set()
        frontier = []
        for cell in topo.node_cells(*key, self.n):
            if cell not in self._seen:
                self._seen.add(cell)
                frontier.append(cell)
        self._frontier = frontier
        self.steps_done = 0

    def expand_to(self, nmax: int) -> None:
        topo = self.topo
        n = self.n
        node_steps = self.node_steps
        seen = self._seen
        reps = topo.reps
        while self.steps_done < nmax and self._frontier:
            self.steps_done += 1
            step = self.steps_done
            self.cell_layers.append(self._frontier)
            nxt = []
            for e, cx, cy in self._frontier:
                for i in (cx, cx + 1):
                    for j in (cy, cy + 1):
                        if 0 < i < n and 0 < j < n:
                            key = (e, i, j)
                            if key in node_steps:
                                continue
                            node_steps[key] = step
                            for cell in ((e, i - 1, j - 1), (e, i - 1, j),
                                         (e, i, j - 1), (e, i, j)):
                                if cell not in seen:
                                    seen.add(cell)
                                    nxt.append(cell)
                        else:
                            rl = reps(e, i, j, n)
                            key = min(rl)
                            if key in node_steps:
                                continue
                            node_steps[key] = step
                            for e2, x, y in rl:
                                for cx2 in (x - 1, x):
                                    if 0 <= cx2 < n:
                                        for cy2 in (y - 1, y):
                                            if 0 <= cy2 < n:
                                                cell = (e2, cx2, cy2)
                                                if cell not in seen:
                                                    seen.add(cell)
                                                    nxt.append(cell)
            self._frontier = nxt

    def node_step(self, gp: GridPoint, nmax: int) -> int | None:
        """BFS steps to reach ``gp``, or None if farther than ``nmax``."""
        if gp.level != self.level:
            gp = lift(normalize(gp), self.level)
        key = self.topo.canon_key(gp.elem, gp.i, gp.j, self.n)
        node_steps = self.node_steps
        while key not in node_steps and self.steps_done < nmax and self._frontier:
            self.expand_to(self.steps_done + 1)
        got = node_steps.get(key)
        if got is None or got > nmax:
            return None
        return got

    def cells_within(self, nmax: int) -> list[tuple[int, int, int]]:
        self.expand_to(nmax)
        out = []
        for layer in self.cell_layers[:nmax]:
            out.extend(layer)
        return out
