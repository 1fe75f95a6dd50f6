from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluidsolid.fespace import (Field, ScalarSpaceP1, build_p1, build_p2vec, evaluate, evaluate_gradient,
                                integrate, interpolate, p1_values, p2_values, quadrature, transfer,
                                zero_mean_project)
from fluidsolid.mesh import build_rect_mesh, refine
from fluidsolid.physics import ModelParams, tanh_circle_ic


def test_dof_counts(unit_mesh):
    assert build_p1(unit_mesh).ndofs == 4
    assert build_p2vec(unit_mesh).ndofs == 2 * (4 + 5)


def test_p1_dofs_match_vertex_table():
    m = build_rect_mesh(2, 1, 64, 32)
    assert build_p1(m).ndofs == 65 * 33 == m.n_vertices


@pytest.mark.parametrize("degree", range(1, 7))
def test_quadrature_monomials(degree):
    q = quadrature(degree)
    assert q.weights.sum() == pytest.approx(0.5, abs=1e-15)
    x, y = q.points[:, 1], q.points[:, 2]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert abs(np.sum(q.weights * x ** a * y ** b) - exact) <= 1e-14


def test_partition_of_unity(rng):
    bary = rng.random((200, 3))
    bary /= bary.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(p1_values(bary).sum(axis=1), 1.0, atol=1e-13)
    np.testing.assert_allclose(p2_values(bary).sum(axis=1), 1.0, atol=1e-13)


def test_p1_exact_for_linear(small_mesh, rng):
    f = interpolate(build_p1(small_mesh), lambda x, y: x + 2 * y)
    pts = rng.random((40, 2)) * [2, 1]
    np.testing.assert_allclose(evaluate(f, pts), pts[:, 0] + 2 * pts[:, 1], atol=1e-13)
    np.testing.assert_allclose(evaluate_gradient(f, pts), np.tile([1.0, 2.0], (40, 1)), atol=1e-12)


def test_p2_exact_for_quadratic(small_mesh, rng):
    V = build_p2vec(small_mesh)
    f = interpolate(V, lambda x, y: np.stack([x ** 2, x * y], axis=-1))
    pts = rng.random((40, 2)) * [2, 1]
    val = evaluate(f, pts)
    np.testing.assert_allclose(val[:, 0], pts[:, 0] ** 2, atol=1e-12)
    np.testing.assert_allclose(val[:, 1], pts[:, 0] * pts[:, 1], atol=1e-12)


def test_interpolate_constant(small_mesh):
    f = interpolate(build_p1(small_mesh), lambda x, y: np.ones_like(x))
    np.testing.assert_array_equal(f.coefficients, 1.0)


def test_interpolate_is_nodal(small_mesh, params):
    prof = tanh_circle_ic([((0.5, 0.5), 0.2)], params)
    V = build_p1(small_mesh)
    f = interpolate(V, prof)
    np.testing.assert_array_equal(f.coefficients, prof(V.nodes[:, 0], V.nodes[:, 1]))


def test_two_circle_profile_far_field(params):
    prof = tanh_circle_ic([((0.5, 0.5), 0.2), ((1.65, 0.65), 0.175)], params)
    assert abs(prof(np.array([1.1]), np.array([0.05]))[0] - 1.0) <= 1e-6


def test_field_length_checked(small_mesh):
    with pytest.raises(ValueError):
        Field(build_p1(small_mesh), np.zeros(3))


def test_zero_mean_project(small_mesh):
    V = build_p1(small_mesh)
    c = zero_mean_project(Field(V, np.full(V.ndofs, 3.0)))
    np.testing.assert_allclose(c.coefficients, 0.0, atol=1e-14)
    px = zero_mean_project(interpolate(V, lambda x, y: x))
    np.testing.assert_allclose(px.coefficients, V.nodes[:, 0] - 1.0, atol=1e-14)
    again = zero_mean_project(px)
    np.testing.assert_allclose(again.coefficients, px.coefficients, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2 ** 31 - 1))
def test_zero_mean_project_linear(a, b, seed):
    m = build_rect_mesh(2, 1, 3, 2)
    V = build_p1(m)
    r = np.random.default_rng(seed)
    f, g = r.standard_normal(V.ndofs), r.standard_normal(V.ndofs)
    lhs = zero_mean_project(Field(V, a * f + b * g)).coefficients
    rhs = a * zero_mean_project(Field(V, f)).coefficients + b * zero_mean_project(Field(V, g)).coefficients
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_integrate_p1(small_mesh):
    V = build_p1(small_mesh)
    assert integrate(V, interpolate(V, lambda x, y: x + y).coefficients) == pytest.approx(2.0 + 1.0)


def test_transfer_linear_and_random(small_mesh, rng):
    V = build_p1(small_mesh)
    lin = interpolate(V, lambda x, y: 3 * x - y + 0.5)
    new_mesh, rmap = refine(small_mesh, rng.random(small_mesh.n_triangles) < 0.5)
    t = transfer(rmap, lin)
    np.testing.assert_allclose(t.coefficients, 3 * new_mesh.vertices[:, 0] - new_mesh.vertices[:, 1] + 0.5,
                               atol=1e-13)
    rnd = Field(V, rng.standard_normal(V.ndofs))
    t = transfer(rmap, rnd)
    np.testing.assert_allclose(t.coefficients, evaluate(rnd, new_mesh.vertices), atol=1e-12)
    const = transfer(rmap, Field(V, np.full(V.ndofs, 2.5)))
    np.testing.assert_allclose(const.coefficients, 2.5, atol=1e-14)


def test_transfer_p2_vector(small_mesh, rng):
    V = build_p2vec(small_mesh)
    f = interpolate(V, lambda x, y: np.stack([x * y, y ** 2 - x], axis=-1))
    new_mesh, rmap = refine(small_mesh, rng.random(small_mesh.n_triangles) < 0.5)
    t = transfer(rmap, f)
    nodes = t.space.nodes
    n = t.space.scalar.ndofs
    np.testing.assert_allclose(t.coefficients[:n], nodes[:, 0] * nodes[:, 1], atol=1e-12)
    np.testing.assert_allclose(t.coefficients[n:], nodes[:, 1] ** 2 - nodes[:, 0], atol=1e-12)


def test_boundary_dofs_match_tags(small_mesh):
    V = build_p2vec(small_mesh, ("left",))
    np.testing.assert_allclose(V.nodes[V.boundary_nodes][:, 0], 0.0)
    assert len(V.boundary_nodes) == 2 * 2 + 1
