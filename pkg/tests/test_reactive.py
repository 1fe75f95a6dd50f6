from dataclasses import replace

import numpy as np
import pytest

from _util import constant_state, directional_error, random_state, unit_direction
from fluidsolid import physics as ph
from fluidsolid.assembly import BoundaryConditions, Discretization, NumericError, StepProblem
from fluidsolid.driver import initial_state, measure_solid, step_monolithic, step_partitioned
from fluidsolid.fespace import Field, interpolate
from fluidsolid.mesh import build_rect_mesh
from fluidsolid.nonlinear import NewtonConfig
from fluidsolid.reactive import ReactiveState, assemble_reactive_step, reaction_volume_rate, step_reactive
from fluidsolid.scenarios import StrategyConfig


def disk(x, y):
    return 0.5 * (1 + np.tanh((np.hypot(x - 1.0, y - 0.5) - 0.3) / (np.sqrt(2) * 0.06)))


@pytest.fixture
def rdisc():
    return Discretization(build_rect_mesh(2.0, 1.0, 8, 4), reactive=True)


def disk_state(disc, params, c0):
    phi = interpolate(disc.p1, disk).coefficients
    return initial_state(disc, phi, params, c0)


def test_equilibrium_concentration_gives_zero_residual(params):
    d = Discretization(build_rect_mesh(2.0, 1.0, 4, 2), reactive=True)
    assert ph.reaction_rate(1.0, params) == 0.0
    for phi in (0.0, 1.0):
        st = ReactiveState(constant_state(d, phi, c=1.0))
        r, system = assemble_reactive_step(d, st, ReactiveState(replace(st.state.copy(), time=params.tau)), params)
        assert np.linalg.norm(r) <= 1e-12
        np.testing.assert_array_equal(system.rhs, -r)


def test_concentration_at_reference_value_has_no_transport(params, rng):
    d = Discretization(build_rect_mesh(2.0, 1.0, 4, 2), reactive=True)
    old, guess = random_state(d, rng), random_state(d, rng, params.tau)
    old.c.coefficients[:] = params.c_star
    guess.c.coefficients[:] = params.c_star
    r, _ = assemble_reactive_step(d, ReactiveState(old), ReactiveState(guess), params)
    assert np.abs(r[d.slices["c"]]).max() <= 1e-13


def test_reactive_jacobian_matches_central_differences(params, rng):
    d = Discretization(build_rect_mesh(2.0, 1.0, 4, 2), BoundaryConditions(c_tags=("left",), c_value=1.5),
                       reactive=True)
    old, guess = ReactiveState(random_state(d, rng)), ReactiveState(random_state(d, rng, params.tau))
    _, system = assemble_reactive_step(d, old, guess, params)
    prob = StepProblem(d, old.state, params, params.tau, reactive=True)
    x = d.pack(guess.state)
    for _ in range(3):
        err, ref = directional_error(prob, x, unit_direction(rng, d.ndofs))
        assert err <= 1e-5 * ref
    np.testing.assert_array_equal(system.matrix.toarray(), prob.jacobian(x).toarray())


def test_equilibrium_step_is_unchanged(rdisc, params):
    st = ReactiveState(constant_state(rdisc, 1.0, c=1.0))
    new, stats = step_reactive(rdisc, st, params)
    np.testing.assert_allclose(rdisc.pack(new.state), rdisc.pack(st.state), atol=1e-12)
    assert new.reacted == 0.0 and new.time == pytest.approx(params.tau)


def test_zero_rate_reproduces_non_reactive_trajectory(params):
    mesh = build_rect_mesh(2.0, 1.0, 8, 4)
    pr = replace(params, k_c=0.0)
    rd, d = Discretization(mesh, reactive=True), Discretization(mesh)
    phi = interpolate(d.p1, disk).coefficients
    a = initial_state(rd, phi, pr, 1.3)
    b = initial_state(d, phi, pr)
    for _ in range(3):
        a, _ = step_monolithic(rd, a, pr, reactive=True)
        b, _ = step_monolithic(d, b, pr)
        for name in ("p", "v", "phi", "mu"):
            np.testing.assert_allclose(getattr(a, name).coefficients, getattr(b, name).coefficients, atol=1e-10)


def test_concentration_mass_balance_without_reaction(params):
    mesh = build_rect_mesh(2.0, 1.0, 8, 4)
    pr = replace(params, k_c=0.0)
    rd = Discretization(mesh, reactive=True)
    st = initial_state(rd, interpolate(rd.p1, disk).coefficients, pr, 1.0)
    st.c = interpolate(rd.p1, lambda x, y: 1.0 + 0.5 * np.cos(np.pi * x))

    def content(s):
        phi_q, _ = rd.p1_at_quad(s.phi.coefficients)
        c_q, _ = rd.p1_at_quad(s.c.coefficients)
        return rd.integrate((phi_q + pr.delta) * (c_q - pr.c_star))

    new, stats = step_monolithic(rd, st, pr, reactive=True)
    assert abs(content(new) - content(st)) <= 10 * stats.max_tol * pr.tau * 2.0


def test_inlet_influx_balances_content_change(params):
    mesh = build_rect_mesh(2.0, 1.0, 8, 4)
    pr = replace(params, k_c=0.0)
    bcs = BoundaryConditions(c_tags=("left",), c_value=1.5)
    rd = Discretization(mesh, bcs, reactive=True)
    free = Discretization(mesh, reactive=True)
    st = initial_state(rd, interpolate(rd.p1, disk).coefficients, pr, 1.0)
    new, stats = step_monolithic(rd, st, pr, reactive=True)

    def content(s):
        phi_q, _ = rd.p1_at_quad(s.phi.coefficients)
        c_q, _ = rd.p1_at_quad(s.c.coefficients)
        return rd.integrate((phi_q + pr.delta) * (c_q - pr.c_star))

    # the unconstrained concentration rows at the inlet carry the boundary flux
    r = StepProblem(free, st, pr, new.time, reactive=True).residual(free.pack(new))
    inlet = free.p1.boundary_dofs(("left",))
    influx = pr.tau * r[free.slices["c"]][inlet].sum()
    assert abs(influx) > 1e-6
    assert content(new) - content(st) == pytest.approx(influx, abs=10 * stats.max_tol)


@pytest.mark.parametrize("c0, sign", [(1.5, 1.0), (0.6, -1.0)])
def test_solid_growth_follows_reaction_sign(rdisc, params, c0, sign):
    st = ReactiveState(disk_state(rdisc, params, c0))
    rate = reaction_volume_rate(rdisc, st.state.phi.coefficients, st.state.c.coefficients, params)
    assert np.sign(rate) == sign
    new, _ = step_reactive(rdisc, st, params)
    before = measure_solid(st.state, params).solid_mass
    after = measure_solid(new.state, params).solid_mass
    assert np.sign(after - before) == sign
    assert np.sign(new.reacted) == sign


def test_partitioned_reactive_step_matches_monolithic(rdisc, params):
    newton = NewtonConfig(relTol=1e-11, absTol=1e-13)
    st = disk_state(rdisc, params, 1.4)
    mono, _ = step_monolithic(rdisc, st, params, newton=newton, reactive=True)
    part, stats = step_partitioned(rdisc, st, params, StrategyConfig("partitioned_direct"), newton, reactive=True)
    assert stats.coupling_iterations >= 1
    np.testing.assert_allclose(part.c.coefficients, mono.c.coefficients, atol=1e-8)
    np.testing.assert_allclose(part.phi.coefficients, mono.phi.coefficients, atol=1e-8)


def test_reactive_state_validation(rdisc):
    with pytest.raises(ValueError):
        ReactiveState(constant_state(Discretization(build_rect_mesh(2.0, 1.0, 4, 2)), 1.0))
    st = constant_state(rdisc, 1.0, c=1.0)
    st.c = Field(rdisc.p1, np.full(rdisc.nv, np.inf))
    with pytest.raises(NumericError):
        ReactiveState(st)


def test_step_reactive_needs_reactive_discretization(params):
    d = Discretization(build_rect_mesh(2.0, 1.0, 4, 2))
    rd = Discretization(build_rect_mesh(2.0, 1.0, 4, 2), reactive=True)
    with pytest.raises(ValueError):
        step_reactive(d, ReactiveState(constant_state(rd, 1.0, c=1.0)), params)
