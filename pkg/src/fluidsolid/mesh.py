"""Conforming triangular meshes on rectangles with newest-vertex bisection.

Triangles are stored as counterclockwise vertex triples ``(v0, v1, v2)``
where ``v2`` is the newest vertex and ``(v0, v1)`` is the refinement edge.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BOUNDARY_NAMES = ("left", "right", "bottom", "top")
INTERIOR = -1


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class RefinementMark:
    triangle: int
    action: str = "refine"  # "refine" | "keep"


@dataclass
class TriMesh:
    """Conforming triangulation of ``[0, Lx] x [0, Ly]``.

    Attributes
    ----------
    vertices : (NV, 2) float array
    triangles : (NT, 3) int array, counterclockwise, newest vertex last
    refinement_level : (NT,) int array
    Lx, Ly : float
        Extents of the rectangle.

    Edge data (``edges``, ``edge_triangles``, ``triangle_edges``,
    ``boundary_tag``) is derived on construction.  Local edge ``i`` of a
    triangle is the one opposite local vertex ``i``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    refinement_level: np.ndarray
    Lx: float
    Ly: float
    edges: np.ndarray = field(init=False, repr=False)
    edge_triangles: np.ndarray = field(init=False, repr=False)
    triangle_edges: np.ndarray = field(init=False, repr=False)
    boundary_tag: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.refinement_level = np.asarray(self.refinement_level, dtype=np.int64)
        self._build_edges()

    # -- topology -------------------------------------------------------
    def _build_edges(self):
        t = self.triangles
        nt = len(t)
        # local edge i is opposite vertex i
        local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        keys = pairs[:, 0] * len(self.vertices) + pairs[:, 1]
        uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        self.edges = pairs[first]
        self.triangle_edges = inverse.reshape(nt, 3)
        owner = np.repeat(np.arange(nt), 3)
        et = np.full((len(uniq), 2), -1, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        starts = np.r_[0, np.flatnonzero(np.diff(sorted_edges)) + 1]
        counts = np.diff(np.r_[starts, len(sorted_edges)])
        if np.any(counts > 2):
            raise MeshError("non-conforming mesh: edge shared by more than two triangles")
        et[sorted_edges[starts], 0] = owner[order[starts]]
        two = counts == 2
        et[sorted_edges[starts[two]], 1] = owner[order[starts[two] + 1]]
        self.edge_triangles = et
        self.boundary_tag = np.full(len(uniq), INTERIOR, dtype=np.int64)
        bnd = np.flatnonzero(et[:, 1] < 0)
        mid = self.vertices[self.edges[bnd]].mean(axis=1)
        tol = 1e-10 * max(self.Lx, self.Ly)
        tags = np.full(len(bnd), INTERIOR)
        tags[np.abs(mid[:, 1] - self.Ly) < tol] = 3
        tags[np.abs(mid[:, 1]) < tol] = 2
        tags[np.abs(mid[:, 0] - self.Lx) < tol] = 1
        tags[np.abs(mid[:, 0]) < tol] = 0
        if np.any(tags == INTERIOR):
            raise MeshError("boundary edge not on the rectangle boundary")
        self.boundary_tag[bnd] = tags

    # -- geometry -------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def diameters(self) -> np.ndarray:
        """Longest edge length of every triangle (``h_T``)."""
        p = self.vertices[self.triangles]
        lens = [np.linalg.norm(p[:, i] - p[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))]
        return np.max(lens, axis=0)

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def boundary_edges(self, tag: str | None = None) -> np.ndarray:
        if tag is None:
            return np.flatnonzero(self.boundary_tag >= 0)
        return np.flatnonzero(self.boundary_tag == BOUNDARY_NAMES.index(tag))

    def boundary_vertices(self, tag: str | None = None) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges(tag)])

    def check_conformity(self) -> None:
        """Raise :class:`MeshError` unless the mesh is a valid conforming tiling."""
        if np.any(self.signed_areas() <= 0.0):
            raise MeshError("triangle with non-positive signed area")
        # an interior vertex lying on an edge shows up as an edge with one
        # triangle that is not on the outer boundary; _build_edges rejects that
        interior_single = (self.edge_triangles[:, 1] < 0) & (self.boundary_tag < 0)
        if np.any(interior_single):
            raise MeshError("hanging vertex detected")
        total = self.area()
        if abs(total - self.Lx * self.Ly) > 1e-12 * self.Lx * self.Ly:
            raise MeshError(f"triangles do not tile the rectangle (area {total})")

    def locate(self, points: np.ndarray, tol: float = 1e-12):
        """Containing triangle and barycentric coordinates of each point.

        Brute force over all triangles; raises :class:`MeshError` for points
        outside the domain.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.vertices[self.triangles]
        a, b, c = p[:, 0], p[:, 1], p[:, 2]
        det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        tri = np.empty(len(pts), dtype=np.int64)
        bary = np.empty((len(pts), 3))
        for k, x in enumerate(pts):
            l1 = ((x[0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (x[1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
            l2 = ((b[:, 0] - a[:, 0]) * (x[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (x[0] - a[:, 0])) / det
            l0 = 1.0 - l1 - l2
            worst = np.minimum(np.minimum(l0, l1), l2)
            i = int(np.argmax(worst))
            if worst[i] < -tol:
                raise MeshError(f"point {tuple(x)} lies outside the mesh")
            tri[k] = i
            bary[k] = (l0[i], l1[i], l2[i])
        return tri, bary


def build_rect_mesh(Lx: float, Ly: float, nx: int, ny: int) -> TriMesh:
    """Structured mesh of ``nx * ny`` cells, each cut along its lower-left to
    upper-right diagonal; the diagonal is the refinement edge of both halves."""
    if not (Lx > 0 and Ly > 0):
        raise MeshError("domain extents must be positive")
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    ll = j * (nx + 1) + i
    lr = ll + 1
    ul = ll + nx + 1
    ur = ul + 1
    lower = np.column_stack([ur, ll, lr])
    upper = np.column_stack([ll, ur, ul])
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = lower
    tris[1::2] = upper
    return TriMesh(verts, tris, np.zeros(len(tris), dtype=np.int64), float(Lx), float(Ly))


@dataclass
class RefineMap:
    """Relates triangles of a refined mesh to their ancestors."""

    old_mesh: TriMesh
    new_mesh: TriMesh
    ancestor: np.ndarray  # new triangle -> old triangle


def refine(mesh: TriMesh, marks) -> tuple[TriMesh, RefineMap]:
    """Newest-vertex bisection of the marked triangles plus conformity closure.

    ``marks`` is a list of :class:`RefinementMark`, or an array of triangle
    indices / a boolean mask.
    """
    sel = _marked_indices(mesh, marks)
    if len(sel) == 0:
        return mesh, RefineMap(mesh, mesh, np.arange(mesh.n_triangles))

    nv0 = mesh.n_vertices
    verts = [mesh.vertices]
    tris = mesh.triangles.copy()
    level = mesh.refinement_level.copy()
    anc = np.arange(mesh.n_triangles)

    # marked edges keyed by sorted vertex pair; vertex ids only grow so a
    # wide integer key is stable across rounds
    base = np.int64(1 << 31)

    def keys(a, b):
        return np.minimum(a, b) * base + np.maximum(a, b)

    marked = set(keys(tris[sel, 0], tris[sel, 1]).tolist())
    # closure: a triangle with any marked edge must have its refinement edge marked
    limit = 10 * mesh.n_triangles + 10
    for _ in range(limit):
        k01 = keys(tris[:, 0], tris[:, 1])
        k12 = keys(tris[:, 1], tris[:, 2])
        k20 = keys(tris[:, 2], tris[:, 0])
        mk = np.fromiter(marked, dtype=np.int64, count=len(marked))
        has = np.isin(k12, mk) | np.isin(k20, mk)
        need = has & ~np.isin(k01, mk)
        if not need.any():
            break
        marked.update(k01[need].tolist())
    else:  # pragma: no cover - guarded by the bisection theory
        raise MeshError("conformity closure did not terminate")

    nverts = nv0
    midpoint: dict[int, int] = {}
    allv = mesh.vertices
    for _ in range(limit):
        if not marked:
            break
        k01 = keys(tris[:, 0], tris[:, 1])
        mk = np.fromiter(marked, dtype=np.int64, count=len(marked))
        todo = np.flatnonzero(np.isin(k01, mk))
        if len(todo) == 0:
            raise MeshError("marked edge without a triangle to bisect")
        t = tris[todo]
        kt = k01[todo]
        new_mid = np.empty(len(todo), dtype=np.int64)
        coords = []
        for n, kk in enumerate(kt.tolist()):
            m = midpoint.get(kk)
            if m is None:
                m = nverts
                nverts += 1
                midpoint[kk] = m
                coords.append(kk)
            new_mid[n] = m
        if coords:
            ck = np.asarray(coords, dtype=np.int64)
            a, b = ck // base, ck % base
            allv = np.vstack([allv, 0.5 * (allv[a] + allv[b])])
        c1 = np.column_stack([t[:, 2], t[:, 0], new_mid])
        c2 = np.column_stack([t[:, 1], t[:, 2], new_mid])
        keep = np.ones(len(tris), dtype=bool)
        keep[todo] = False
        tris = np.vstack([tris[keep], c1, c2])
        lv = level[todo] + 1
        level = np.concatenate([level[keep], lv, lv])
        anc = np.concatenate([anc[keep], anc[todo], anc[todo]])
        # an edge stays marked until no triangle contains it any more; its
        # second neighbour may only reach it as refinement edge later
        present = np.concatenate([keys(tris[:, 0], tris[:, 1]), keys(tris[:, 1], tris[:, 2]),
                                  keys(tris[:, 2], tris[:, 0])])
        done = np.fromiter(marked, dtype=np.int64, count=len(marked))
        marked = set(done[np.isin(done, present)].tolist())
    else:  # pragma: no cover
        raise MeshError("bisection did not terminate")

    new = TriMesh(allv, tris, level, mesh.Lx, mesh.Ly)
    return new, RefineMap(mesh, new, anc)


def _marked_indices(mesh: TriMesh, marks) -> np.ndarray:
    if marks is None:
        return np.zeros(0, dtype=np.int64)
    if isinstance(marks, np.ndarray) and marks.dtype == bool:
        if marks.shape != (mesh.n_triangles,):
            raise MeshError("mark mask does not match the mesh")
        return np.flatnonzero(marks)
    items = list(marks)
    if items and isinstance(items[0], RefinementMark):
        idx = np.array([m.triangle for m in items if m.action == "refine"], dtype=np.int64)
    else:
        idx = np.asarray(items, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= mesh.n_triangles):
        raise MeshError("refinement mark index out of range")
    return np.unique(idx)


def mark_by_gradient(mesh: TriMesh, phi: np.ndarray, refine_threshold: float = 0.1,
                     max_level: int = 10) -> list[RefinementMark]:
    """Mark triangles where ``|grad phi| * h_T`` exceeds the threshold.

    ``phi`` holds P1 (vertex) coefficients.  Triangles already at
    ``max_level`` are kept.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (mesh.n_vertices,):
        raise MeshError(f"phi has {phi.shape} entries, mesh has {mesh.n_vertices} vertices")
    grad = p1_gradients(mesh)
    g = np.einsum("tkd,tk->td", grad, phi[mesh.triangles])
    indicator = np.linalg.norm(g, axis=1) * mesh.diameters()
    hit = (indicator > refine_threshold) & (mesh.refinement_level < max_level)
    return [RefinementMark(int(i), "refine" if hit[i] else "keep") for i in range(mesh.n_triangles)]


def p1_gradients(mesh: TriMesh) -> np.ndarray:
    """Gradients of the three barycentric coordinates on each triangle, (NT, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    x, y = p[:, :, 0], p[:, :, 1]
    two_area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    g = np.empty((len(p), 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = (y[:, j] - y[:, k]) / two_area
        g[:, i, 1] = (x[:, k] - x[:, j]) / two_area
    return g


def barycentric(mesh: TriMesh, tri: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``points[i]`` with respect to triangle ``tri[i]``."""
    p = mesh.vertices[mesh.triangles[tri]]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    x = points
    l1 = ((x[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (x[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
    l2 = ((b[:, 0] - a[:, 0]) * (x[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (x[:, 0] - a[:, 0])) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])
