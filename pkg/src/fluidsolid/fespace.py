"""Lagrange P1 / P2 spaces on :class:`~fluidsolid.mesh.TriMesh`, quadrature,
point evaluation and solution transfer between refined meshes."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .mesh import BOUNDARY_NAMES, MeshError, RefineMap, TriMesh, barycentric, p1_gradients


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle: barycentric points, weights summing to 1/2."""

    degree: int
    points: np.ndarray  # (Q, 3)
    weights: np.ndarray  # (Q,)


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)], [w] * 3


def _orbit6(a, b, w):
    c = 1.0 - a - b
    pts = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
    return pts, [w] * 6


def _rule(parts):
    pts, wts = [], []
    for p, w in parts:
        pts += p
        wts += w
    return np.array(pts), 0.5 * np.array(wts)


@lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Symmetric positive rule exact for polynomials of total degree ``degree``."""
    if degree not in (1, 2, 3, 4, 5, 6):
        raise ValueError(f"unsupported quadrature degree {degree}; use 1..6")
    if degree == 1:
        pts, wts = np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([0.5])
    elif degree == 2:
        pts, wts = _rule([_orbit3(1 / 6, 1 / 3)])
    elif degree in (3, 4):
        pts, wts = _rule([
            _orbit3(0.445948490915965, 0.223381589678011),
            _orbit3(0.091576213509771, 0.109951743655322),
        ])
    elif degree == 5:
        s = np.sqrt(15.0)
        pts, wts = _rule([
            ([(1 / 3, 1 / 3, 1 / 3)], [9 / 40]),
            _orbit3((6 + s) / 21, (155 + s) / 1200),
            _orbit3((6 - s) / 21, (155 - s) / 1200),
        ])
    else:
        pts, wts = _rule([
            _orbit3(0.249286745170910, 0.116786275726379),
            _orbit3(0.063089014491502, 0.050844906370207),
            _orbit6(0.053145049844817, 0.310352451033784, 0.082851075618374),
        ])
    # the tabulated constants carry ~15 digits; renormalise so that the
    # weights sum to exactly 1/2 and points are exact convex combinations
    pts = pts / pts.sum(axis=1, keepdims=True)
    wts = wts * (0.5 / wts.sum())
    return QuadratureRule(degree, pts, wts)


# ---------------------------------------------------------------------------
# reference basis functions (barycentric form)
# ---------------------------------------------------------------------------
def p1_values(bary: np.ndarray) -> np.ndarray:
    return np.asarray(bary, dtype=float)


def p2_values(bary: np.ndarray) -> np.ndarray:
    """P2 shape functions, order: vertices 0,1,2 then edges opposite 0,1,2."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
    ], axis=-1)


def p2_dlambda(bary: np.ndarray) -> np.ndarray:
    """Derivatives of the P2 shape functions w.r.t. the barycentrics, (..., 6, 3)."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    z = np.zeros_like(l0)
    rows = [
        (4 * l0 - 1, z, z),
        (z, 4 * l1 - 1, z),
        (z, z, 4 * l2 - 1),
        (z, 4 * l2, 4 * l1),
        (4 * l2, z, 4 * l0),
        (4 * l1, 4 * l0, z),
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


# ---------------------------------------------------------------------------
# spaces
# ---------------------------------------------------------------------------
class ScalarSpaceP1:
    degree = 1
    n_local = 3

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.ndofs = mesh.n_vertices
        self.nodes = mesh.vertices
        self.cell_dofs = mesh.triangles

    def boundary_dofs(self, tags: Sequence[str]) -> np.ndarray:
        out = [self.mesh.boundary_vertices(t) for t in tags]
        return np.unique(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)

    def basis(self, bary):
        return p1_values(bary)


class ScalarSpaceP2:
    degree = 2
    n_local = 6

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        nv = mesh.n_vertices
        self.ndofs = nv + mesh.n_edges
        mids = mesh.vertices[mesh.edges].mean(axis=1)
        self.nodes = np.vstack([mesh.vertices, mids])
        self.cell_dofs = np.hstack([mesh.triangles, nv + mesh.triangle_edges])

    def boundary_dofs(self, tags: Sequence[str]) -> np.ndarray:
        out = []
        for t in tags:
            e = self.mesh.boundary_edges(t)
            out += [self.mesh.edges[e].ravel(), self.mesh.n_vertices + e]
        return np.unique(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)

    def basis(self, bary):
        return p2_values(bary)


class VectorSpaceP2:
    """Two-component P2 space, coefficients blocked by component
    ``[v_x dofs..., v_y dofs...]``.

    ``dirichlet_tags`` lists the boundary parts on which the velocity is
    prescribed; the values themselves come from the scenario's evaluators.
    """

    degree = 2

    def __init__(self, mesh: TriMesh, dirichlet_tags: Sequence[str] = BOUNDARY_NAMES):
        self.mesh = mesh
        self.scalar = ScalarSpaceP2(mesh)
        self.ndofs = 2 * self.scalar.ndofs
        self.nodes = self.scalar.nodes
        self.dirichlet_tags = tuple(dirichlet_tags)
        self.boundary_nodes = self.scalar.boundary_dofs(self.dirichlet_tags)
        n = self.scalar.ndofs
        self.boundary_dof_index = np.concatenate([self.boundary_nodes, n + self.boundary_nodes])

    def boundary_values(self, evaluator: Callable[[np.ndarray], np.ndarray] | None) -> np.ndarray:
        """Prescribed values on :attr:`boundary_dof_index` (zero if no evaluator)."""
        nb = len(self.boundary_nodes)
        if evaluator is None:
            return np.zeros(2 * nb)
        vals = np.asarray(evaluator(self.nodes[self.boundary_nodes]), dtype=float)
        return np.concatenate([vals[:, 0], vals[:, 1]])


def build_p1(mesh: TriMesh) -> ScalarSpaceP1:
    return ScalarSpaceP1(mesh)


def build_p2vec(mesh: TriMesh, dirichlet_tags: Sequence[str] = BOUNDARY_NAMES) -> VectorSpaceP2:
    return VectorSpaceP2(mesh, dirichlet_tags)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------
@dataclass
class Field:
    space: object
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.ndofs,):
            raise MeshError(
                f"field has {self.coefficients.shape} coefficients, space has {self.space.ndofs} dofs")

    def copy(self) -> "Field":
        return Field(self.space, self.coefficients.copy())


def _cell_values(space, tri, bary, coeffs):
    """Interpolated value(s) at barycentric points of the given triangles."""
    if isinstance(space, VectorSpaceP2):
        n = space.scalar.ndofs
        dofs = space.scalar.cell_dofs[tri]
        N = p2_values(bary)
        vx = np.einsum("pi,pi->p", N, coeffs[:n][dofs])
        vy = np.einsum("pi,pi->p", N, coeffs[n:][dofs])
        return np.column_stack([vx, vy])
    dofs = space.cell_dofs[tri]
    N = space.basis(bary)
    return np.einsum("pi,pi->p", N, coeffs[dofs])


def _cell_gradients(space, tri, bary, coeffs):
    g1 = p1_gradients(space.mesh)[tri]  # (P, 3, 2)
    if isinstance(space, ScalarSpaceP1):
        return np.einsum("pkd,pk->pd", g1, coeffs[space.cell_dofs[tri]])
    scalar = space.scalar if isinstance(space, VectorSpaceP2) else space
    G = np.einsum("pak,pkd->pad", p2_dlambda(bary), g1)
    dofs = scalar.cell_dofs[tri]
    if isinstance(space, VectorSpaceP2):
        n = scalar.ndofs
        gx = np.einsum("pad,pa->pd", G, coeffs[:n][dofs])
        gy = np.einsum("pad,pa->pd", G, coeffs[n:][dofs])
        return np.stack([gx, gy], axis=1)  # (P, component, derivative)
    return np.einsum("pad,pa->pd", G, coeffs[dofs])


def evaluate(field: Field, point) -> np.ndarray:
    """Value of a field at one point or an (N, 2) array of points."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    tri, bary = field.space.mesh.locate(pts)
    out = _cell_values(field.space, tri, bary, field.coefficients)
    return out[0] if np.ndim(point) == 1 else out


def evaluate_gradient(field: Field, point) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    tri, bary = field.space.mesh.locate(pts)
    out = _cell_gradients(field.space, tri, bary, field.coefficients)
    return out[0] if np.ndim(point) == 1 else out


def interpolate(space, func: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Field:
    """Nodal interpolant of ``func(x, y)``; vector spaces expect an (N, 2) result."""
    x, y = space.nodes[:, 0], space.nodes[:, 1]
    vals = np.asarray(func(x, y), dtype=float)
    if isinstance(space, VectorSpaceP2):
        vals = np.broadcast_to(vals, (len(x), 2))
        return Field(space, np.concatenate([vals[:, 0], vals[:, 1]]))
    return Field(space, np.broadcast_to(vals, x.shape).copy())


def integrate(space: ScalarSpaceP1, coeffs: np.ndarray) -> float:
    """Exact integral of a P1 function."""
    mesh = space.mesh
    return float(np.sum(mesh.signed_areas() * coeffs[mesh.triangles].mean(axis=1)))


def zero_mean_project(p: Field) -> Field:
    """Subtract the mesh-integral mean of a P1 field."""
    mesh = p.space.mesh
    mean = integrate(p.space, p.coefficients) / mesh.area()
    return Field(p.space, p.coefficients - mean)


def transfer(refine_map: RefineMap, field: Field, new_space=None) -> Field:
    """Nodal interpolation of ``field`` onto the same kind of space over the
    refined mesh, evaluating inside each new node's ancestor triangle."""
    old_space = field.space
    if old_space.mesh is not refine_map.old_mesh:
        raise MeshError("field does not live on the refine map's source mesh")
    new_mesh = refine_map.new_mesh
    if new_space is None:
        if isinstance(old_space, VectorSpaceP2):
            new_space = VectorSpaceP2(new_mesh, old_space.dirichlet_tags)
        else:
            new_space = type(old_space)(new_mesh)
    if new_space.mesh is not new_mesh or type(new_space) is not type(old_space):
        raise MeshError("target space does not match the refined mesh")
    scalar = new_space.scalar if isinstance(new_space, VectorSpaceP2) else new_space
    # one owning new triangle per node
    owner = np.empty(scalar.ndofs, dtype=np.int64)
    owner[scalar.cell_dofs.ravel()] = np.repeat(np.arange(new_mesh.n_triangles), scalar.cell_dofs.shape[1])
    tri_old = refine_map.ancestor[owner]
    bary = barycentric(refine_map.old_mesh, tri_old, scalar.nodes)
    vals = _cell_values(old_space, tri_old, bary, field.coefficients)
    if isinstance(new_space, VectorSpaceP2):
        return Field(new_space, np.concatenate([vals[:, 0], vals[:, 1]]))
    return Field(new_space, vals)
