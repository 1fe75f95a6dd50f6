"""Time stepping, preprocessing and diagnostics.

The :class:`Stepper` advances one step either monolithically (Newton on the
full system) or with a partitioned fixed-point loop (flow first, then the
Cahn-Hilliard block), always accepting on the coupled residual.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import physics as ph
from .assembly import BoundaryConditions, Discretization, StepProblem, SystemState
from .fespace import Field, interpolate, transfer, zero_mean_project
from .linalg import (DirectLinearSolver, IterativeLinearSolver, LUFactor, ilu0, simple_precond)
from .mesh import TriMesh, build_rect_mesh, mark_by_gradient, refine
from .nonlinear import NewtonConfig, NewtonStats, newton_solve, stop_tolerance
from .physics import ModelParams
from .scenarios import RunControls, Scenario, StrategyConfig, homogeneous_velocity_at, realize_bcs

log = logging.getLogger(__name__)


class StepFailure(RuntimeError):
    """A time step did not converge."""

    def __init__(self, message: str, step: int | None = None, trace: list | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step
        self.trace = trace or []


class PreprocessingError(StepFailure):
    pass


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------
@dataclass
class EnergyReport:
    kinetic: float
    dw_energy: float
    grad_energy: float
    total: float
    visc_dissipation: float
    drag_dissipation: float
    ch_dissipation: float
    time: float = 0.0

    @property
    def dissipation(self) -> float:
        return self.visc_dissipation + self.drag_dissipation + self.ch_dissipation


@dataclass
class DissipationVerdict:
    passed: bool
    lhs: float
    rhs: float
    slack: float

    @property
    def margin(self) -> float:
        return self.rhs + self.slack - self.lhs


@dataclass
class ShrinkageReport:
    """Solid-phase measures.

    ``solid_area`` is the area of ``{phi < 1/2}``; ``solid_mass`` is
    ``int (1 - phi)`` clamped to ``[0, |Omega|]``.  The effective radius and
    Cahn number derive from ``solid_area``.
    """

    solid_area: float
    solid_mass: float
    effective_radius: float
    cahn_number: float | None
    critical_radius: float
    predicted_shrinkage: float | None


@dataclass
class StepStats:
    newton_iterations: int = 0
    coupling_iterations: int = 0
    ns_newton_iterations: int = 0
    ch_newton_iterations: int = 0
    ns_linear_iterations: int = 0
    ch_linear_iterations: int = 0
    linear_iterations: int = 0
    max_tol: float = 0.0
    residual_norm: float = 0.0
    trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------
def compute_energy(disc: Discretization, state: SystemState, prev_state: SystemState | None,
                   params: ModelParams) -> EnergyReport:
    """Free energy of ``state`` and the dissipation rates of the step into it."""
    x = disc.pack(state)
    u = disc.fields_at_quad(x)
    prev = u if prev_state is None else disc.fields_at_quad(disc.pack(prev_state))
    eps, sig = params.epsilon, params.sigma
    rt = params.rho * (u["phi"] + params.delta)
    kinetic = disc.integrate(0.5 * rt * np.sum(u["v"] ** 2, axis=-1))
    dw = sig / eps * disc.integrate(ph.double_well(u["phi"], params))
    grad = 0.5 * sig * eps * disc.integrate(np.broadcast_to(np.sum(u["gphi"] ** 2, axis=-1)[:, None], disc.W.shape))
    gv = u["gv"]
    sym = 0.5 * (gv + np.swapaxes(gv, -1, -2))
    visc = disc.integrate(2 * params.gamma * np.sum(sym * sym, axis=(-1, -2)))
    d_old = ph.drag(ph.fluid_fraction(prev["phi"], params), params)
    drag = disc.integrate(params.rho * d_old * np.sum(u["v"] ** 2, axis=-1))
    ch = sig * params.M * eps * disc.integrate(np.broadcast_to(np.sum(u["gmu"] ** 2, axis=-1)[:, None], disc.W.shape))
    return EnergyReport(kinetic, dw, grad, kinetic + dw + grad, visc, drag, ch, state.time)


def check_dissipation(F_old: EnergyReport, F_new: EnergyReport, tau: float,
                      max_tol: float = 0.0) -> DissipationVerdict:
    """Discrete energy inequality ``(F_new - F_old)/tau <= -dissipation + slack``."""
    lhs = (F_new.total - F_old.total) / tau
    rhs = -F_new.dissipation
    slack = max(1e-10 * abs(F_old.total), 10.0 * max_tol)
    return DissipationVerdict(bool(lhs <= rhs + slack), lhs, rhs, slack)


def level_set_area(mesh: TriMesh, phi: np.ndarray, level: float = 0.5) -> float:
    """Exact area of ``{phi_h < level}`` for a P1 function ``phi_h``."""
    s = phi[mesh.triangles] - level
    area = np.abs(mesh.signed_areas())
    neg = s < 0
    count = neg.sum(axis=1)
    total = float(area[count == 3].sum())
    mixed = (count == 1) | (count == 2)
    if np.any(mixed):
        sm, am, nm = s[mixed], area[mixed], neg[mixed]
        # the isolated vertex is the one whose sign differs from the other two
        iso_neg = nm.sum(axis=1) == 1
        k = np.where(iso_neg, np.argmax(nm, axis=1), np.argmin(nm, axis=1))
        rows = np.arange(len(k))
        sk = sm[rows, k]
        sj = sm[rows, (k + 1) % 3]
        sl = sm[rows, (k + 2) % 3]
        frac = (sk / (sk - sj)) * (sk / (sk - sl))
        total += float(np.sum(np.where(iso_neg, am * frac, am * (1 - frac))))
    return total


def measure_solid(state: SystemState, params: ModelParams) -> ShrinkageReport:
    mesh = state.phi.space.mesh
    V = mesh.area()
    phi = state.phi.coefficients
    area = level_set_area(mesh, phi)
    mass = float(np.clip(V - _p1_integral(mesh, phi), 0.0, V))
    r = math.sqrt(area / math.pi)
    r_c = (math.sqrt(6.0) / (8.0 * math.pi) * V * params.epsilon) ** (1.0 / 3.0)
    if r > 0:
        cn = params.epsilon / r
        r_tilde = math.sqrt(2.0) * V / (24.0 * math.pi) * params.epsilon / r ** 2
    else:
        cn = r_tilde = None
    return ShrinkageReport(area, mass, r, cn, r_c, r_tilde)


def _p1_integral(mesh: TriMesh, coeffs: np.ndarray) -> float:
    return float(np.sum(np.abs(mesh.signed_areas()) * coeffs[mesh.triangles].mean(axis=1)))


def solid_components(state: SystemState, level: float = 0.5):
    """Label connected solid regions (vertices with ``phi < level``).

    Returns ``(n_components, labels)`` where ``labels`` is -1 on fluid vertices.
    """
    mesh = state.phi.space.mesh
    solid = state.phi.coefficients < level
    e = mesh.edges
    keep = solid[e[:, 0]] & solid[e[:, 1]]
    n = mesh.n_vertices
    g = sp.coo_matrix((np.ones(keep.sum()), (e[keep, 0], e[keep, 1])), shape=(n, n))
    _, lab = connected_components(g, directed=False)
    labels = np.full(n, -1)
    uniq, labels_solid = np.unique(lab[solid], return_inverse=True)
    labels[solid] = labels_solid
    return len(uniq), labels


def is_clogged(state: SystemState, level: float = 0.5) -> bool:
    """True when one solid component touches both the bottom and the top wall."""
    mesh = state.phi.space.mesh
    _, labels = solid_components(state, level)
    bot = set(labels[mesh.boundary_vertices("bottom")]) - {-1}
    top = set(labels[mesh.boundary_vertices("top")]) - {-1}
    return bool(bot & top)


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------
def _sub_newton(prob: StepProblem, x: np.ndarray, idx: np.ndarray, solver, config: NewtonConfig,
                max_tol: float | None):
    """Newton on the unknowns ``idx`` with all others frozen at ``x``."""
    z = x.copy()

    def embed(y):
        z[idx] = y
        return z

    def res(y):
        return prob.residual(embed(y))[idx]

    def jac(y):
        J = prob.jacobian(embed(y))
        return J[idx][:, idx]

    y, stats = newton_solve(res, jac, solver, x[idx], config, max_tol)
    out = x.copy()
    out[idx] = y
    return out, stats


class Stepper:
    """Advance :class:`SystemState` objects on a fixed discretization."""

    def __init__(self, disc: Discretization, params: ModelParams, strategy: StrategyConfig = StrategyConfig(),
                 newton: NewtonConfig = NewtonConfig(), reactive: bool = False):
        self.disc = disc
        self.params = params
        self.strategy = strategy
        self.newton = newton
        self.reactive = reactive
        d = disc
        self.phi_idx = np.arange(d.slices["phi"].start, d.slices["phi"].stop)
        self.cahn_idx = np.arange(d.slices["phi"].start, d.slices["mu"].stop)

    def _solvers(self):
        if self.strategy.mode == "partitioned_iterative":
            n1 = len(self.phi_idx)
            ns = IterativeLinearSolver(ilu0, restart=200, max_iter=1000)
            sch = self.strategy.schur_solver
            ch = IterativeLinearSolver(lambda J: simple_precond(J, n1, sch), restart=200, max_iter=10000)
            return ns, ch
        return DirectLinearSolver(), DirectLinearSolver()

    def step(self, old: SystemState, time: float, step_index: int | None = None):
        prob = StepProblem(self.disc, old, self.params, time, reactive=self.reactive)
        x0 = prob.initial_guess()
        try:
            if self.strategy.mode == "monolithic":
                x, stats = self._monolithic(prob, x0)
            else:
                x, stats = self._partitioned(prob, x0)
        except StepFailure as exc:
            raise StepFailure(str(exc), step_index, exc.trace) from exc
        except Exception as exc:  # noqa: BLE001 - rewrapped with the step index
            raise StepFailure(f"{type(exc).__name__}: {exc}", step_index) from exc
        new = self.disc.unpack(x, time)
        if self.disc.bcs.pin_pressure:
            new.p = zero_mean_project(new.p)
        return new, stats

    def _monolithic(self, prob, x0):
        x, ns = newton_solve(prob.residual, prob.jacobian, DirectLinearSolver(), x0, self.newton)
        if not ns.converged:
            raise StepFailure(f"Newton did not converge in {ns.iterations} iterations", trace=ns.residual_norms)
        return x, StepStats(newton_iterations=ns.iterations, linear_iterations=ns.total_linear_iterations,
                            max_tol=ns.max_tol, residual_norm=ns.residual_norms[-1],
                            trace=list(ns.residual_norms))

    def _partitioned(self, prob, x0):
        d = self.disc
        r0 = float(np.linalg.norm(prob.residual(x0)))
        tol = self.strategy.coupling_tol or stop_tolerance(r0, self.newton)
        sub_tol = 0.5 * tol
        ns_solver, ch_solver = self._solvers()
        st = StepStats(max_tol=tol)
        x = x0
        norm = r0
        st.trace.append(norm)
        while norm > tol:
            if st.coupling_iterations >= self.strategy.max_coupling:
                raise StepFailure(f"coupling loop did not converge in {st.coupling_iterations} iterations",
                                  trace=st.trace)
            x, s1 = _sub_newton(prob, x, d.ns_index, ns_solver, self.newton, sub_tol)
            x, s2 = _sub_newton(prob, x, d.ch_index, ch_solver, self.newton, sub_tol)
            for s, name in ((s1, "Navier-Stokes"), (s2, "Cahn-Hilliard")):
                if not s.converged:
                    raise StepFailure(f"{name} sub-solve did not converge", trace=st.trace)
            st.coupling_iterations += 1
            st.ns_newton_iterations += s1.iterations
            st.ch_newton_iterations += s2.iterations
            st.ns_linear_iterations += s1.total_linear_iterations
            st.ch_linear_iterations += s2.total_linear_iterations
            norm = float(np.linalg.norm(prob.residual(x)))
            st.trace.append(norm)
        st.newton_iterations = st.ns_newton_iterations + st.ch_newton_iterations
        st.linear_iterations = st.ns_linear_iterations + st.ch_linear_iterations
        st.residual_norm = norm
        return x, st


def step_monolithic(disc: Discretization, old: SystemState, params: ModelParams,
                    strategy: StrategyConfig = StrategyConfig(), newton: NewtonConfig = NewtonConfig(),
                    reactive: bool = False):
    """One monolithic step from ``old`` to ``old.time + tau``."""
    strategy = StrategyConfig("monolithic", strategy.coupling_tol, strategy.max_coupling, strategy.schur_solver)
    return Stepper(disc, params, strategy, newton, reactive).step(old, old.time + params.tau)


def step_partitioned(disc: Discretization, old: SystemState, params: ModelParams,
                     strategy: StrategyConfig = StrategyConfig("partitioned_direct"),
                     newton: NewtonConfig = NewtonConfig(), reactive: bool = False):
    """One partitioned step (flow, then Cahn-Hilliard, repeated)."""
    if strategy.mode == "monolithic":
        raise ValueError("step_partitioned needs a partitioned strategy mode")
    return Stepper(disc, params, strategy, newton, reactive).step(old, old.time + params.tau)


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------
def initial_potential(disc: Discretization, phi: np.ndarray, params: ModelParams) -> np.ndarray:
    """Chemical potential consistent with ``phi`` (mu-equation with equal time levels)."""
    x = np.zeros(disc.ndofs)
    x[disc.slices["phi"]] = phi
    u = disc.fields_at_quad(x)
    eps = params.epsilon
    f0 = ph.double_well_prime(u["phi"], params) / eps
    rhs = np.zeros(disc.nv)
    np.add.at(rhs, disc.cells1, disc._vec(1, f0=f0, f1=eps * np.broadcast_to(u["gphi"][:, None, :], u["v"].shape)))
    one = np.ones_like(disc.W)
    Mloc = disc._mat(1, 1, a00=one)
    T = disc.cells1.shape[0]
    rows = np.repeat(disc.cells1, 3, axis=1).ravel()
    cols = np.tile(disc.cells1, (1, 3)).ravel()
    M = sp.csr_matrix((Mloc.ravel(), (rows, cols)), shape=(disc.nv, disc.nv))
    return LUFactor(M).solve(rhs)


def initial_state(disc: Discretization, phi: np.ndarray, params: ModelParams,
                  c0: float | None = None, time: float = 0.0) -> SystemState:
    """Fluid at rest with the given phase field."""
    p1 = disc.p1
    phi = np.asarray(phi, dtype=float)
    mu = initial_potential(disc, phi, params)
    c = Field(p1, np.full(disc.nv, 1.0 if c0 is None else c0)) if disc.reactive else None
    if disc.reactive and disc.bcs.c_tags:
        c.coefficients[p1.boundary_dofs(disc.bcs.c_tags)] = disc.bcs.c_value
    if disc.bcs.phi_tags:
        phi = phi.copy()
        phi[p1.boundary_dofs(disc.bcs.phi_tags)] = disc.bcs.phi_value
    return SystemState(Field(p1, np.zeros(disc.nv)), Field(disc.vspace, np.zeros(disc.vspace.ndofs)),
                       Field(p1, phi), Field(p1, mu), c, time)


def refine_initial(mesh: TriMesh, phi_func, threshold: float, levels: int) -> TriMesh:
    """Gradient-driven refinement of the interpolated initial phase field."""
    for _ in range(levels * 2 + 2):
        phi = interpolate(_p1(mesh), phi_func).coefficients
        marks = mark_by_gradient(mesh, phi, threshold, levels)
        if not any(m.action == "refine" for m in marks):
            break
        mesh, _ = refine(mesh, marks)
    return mesh


def _p1(mesh):
    from .fespace import ScalarSpaceP1
    return ScalarSpaceP1(mesh)


def preprocess_initial(indicator: Callable, mesh: TriMesh, params: ModelParams,
                       bcs: BoundaryConditions | None = None, newton: NewtonConfig = NewtonConfig(),
                       adapt: bool = False, threshold: float = 0.1, max_level: int = 4) -> Field:
    """Diffuse a sharp 0/1 indicator with ``n_pre`` high-mobility Cahn-Hilliard steps.

    The velocity is zero throughout.  With ``adapt`` the mesh is refined
    (never coarsened) between the steps.  Returns the P1 phase field, whose
    space carries the final mesh.
    """
    bcs = bcs or BoundaryConditions()
    phi = interpolate(_p1(mesh), indicator)
    if params.n_pre == 0:
        return phi
    for k in range(params.n_pre):
        if adapt and k > 0:
            marks = mark_by_gradient(mesh, phi.coefficients, threshold, max_level)
            if any(m.action == "refine" for m in marks):
                mesh, rmap = refine(mesh, marks)
                phi = transfer(rmap, phi)
        disc = Discretization(mesh, bcs)
        old = initial_state(disc, phi.coefficients, params)
        prob = StepProblem(disc, old, params, (k + 1) * params.tau, preprocessing=True)
        x0 = prob.initial_guess()
        idx = np.arange(disc.slices["phi"].start, disc.slices["mu"].stop)
        try:
            x, st = _sub_newton(prob, x0, idx, DirectLinearSolver(), newton, None)
        except Exception as exc:  # noqa: BLE001
            raise PreprocessingError(f"preprocessing iteration {k}: {exc}", k) from exc
        if not st.converged:
            raise PreprocessingError(f"preprocessing iteration {k}: Newton did not converge", k)
        phi = Field(disc.p1, x[disc.slices["phi"]].copy())
    log.info("preprocessed phase field range [%.4g, %.4g]", phi.coefficients.min(), phi.coefficients.max())
    return phi


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------
@dataclass
class StepRecord:
    step: int
    time: float
    energy: EnergyReport
    shrinkage: ShrinkageReport
    stats: StepStats | None
    mass: float
    n_components: int
    verdict: DissipationVerdict | None = None


@dataclass
class SimulationResult:
    records: list
    states: list
    final_state: SystemState
    disc: Discretization

    def series(self, attr: str) -> np.ndarray:
        """Energy or shrinkage attribute over all records, e.g. ``"total"``."""
        out = []
        for r in self.records:
            src = r.energy if hasattr(r.energy, attr) else r.shrinkage
            out.append(getattr(src, attr))
        return np.array(out, dtype=float)


def build_initial(scenario: Scenario, params: ModelParams, newton: NewtonConfig = NewtonConfig(),
                  adapt_preprocessing: bool = True):
    """Initial mesh, discretization and state for a scenario."""
    bcs = realize_bcs(scenario, params)
    mesh = build_rect_mesh(scenario.Lx, scenario.Ly, scenario.nx, scenario.ny)
    phi_func = scenario.initial_phase(params)
    mesh = refine_initial(mesh, phi_func, scenario.refine_threshold, scenario.levels)
    if params.n_pre > 0:
        phi = preprocess_initial(scenario.indicator(), mesh, params, bcs, newton, adapt_preprocessing,
                                 scenario.refine_threshold, scenario.levels)
        mesh = phi.space.mesh
        phi0 = phi.coefficients
    else:
        phi0 = interpolate(_p1(mesh), phi_func).coefficients
    disc = Discretization(mesh, bcs, reactive=scenario.reactive)
    state = initial_state(disc, phi0, params, scenario.c_initial if scenario.reactive else None)
    return disc, state


def _record(step, disc, state, prev, params, stats, n0_mass, verdict=None):
    energy = compute_energy(disc, state, prev, params)
    shrink = measure_solid(state, params)
    ncomp, _ = solid_components(state)
    mass = _p1_integral(disc.mesh, state.phi.coefficients)
    return StepRecord(step, state.time, energy, shrink, stats, mass, ncomp, verdict)


def adapt_state(disc: Discretization, state: SystemState, params: ModelParams, threshold: float,
                max_level: int):
    """Refine (never coarsen) where the phase-field gradient is large."""
    marks = mark_by_gradient(disc.mesh, state.phi.coefficients, threshold, max_level)
    if not any(m.action == "refine" for m in marks):
        return disc, state
    mesh, rmap = refine(disc.mesh, marks)
    new_disc = Discretization(mesh, disc.bcs, disc.reactive)
    new = SystemState(transfer(rmap, state.p, new_disc.p1), transfer(rmap, state.v, new_disc.vspace),
                      transfer(rmap, state.phi, new_disc.p1), transfer(rmap, state.mu, new_disc.p1),
                      None if state.c is None else transfer(rmap, state.c, new_disc.p1), state.time)
    return new_disc, new


def run_simulation(scenario: Scenario, params: ModelParams, strategy: StrategyConfig = StrategyConfig(),
                   n_steps: int = 200, newton: NewtonConfig = NewtonConfig(),
                   controls: RunControls | None = None, keep_states: bool = False,
                   callback: Callable | None = None, initial: tuple | None = None) -> SimulationResult:
    """Run ``n_steps`` time steps of a scenario.

    Parameters
    ----------
    controls
        ``adapt`` enables refine-only adaptivity after each step unless
        ``energy_audit`` is set; ``energy_audit`` evaluates the dissipation
        inequality on every step with homogeneous velocity data.
    callback
        Called as ``callback(record, state, disc)`` after every step.
    initial
        Optional ``(disc, state)`` replacing the scenario's initial data.
    """
    controls = controls or RunControls(steps=n_steps)
    params.validate()
    disc, state = initial if initial is not None else build_initial(scenario, params, newton)
    stepper = Stepper(disc, params, strategy, newton, reactive=scenario.reactive)
    records = [_record(0, disc, state, None, params, None, None)]
    states = [state] if keep_states else []
    if callback:
        callback(records[0], state, disc)
    adapt = controls.adapt and not controls.energy_audit
    for n in range(n_steps):
        t_new = state.time + params.tau
        if adapt and n > 0:
            new_disc, state = adapt_state(disc, state, params, scenario.refine_threshold, scenario.levels)
            if new_disc is not disc:
                disc = new_disc
                stepper = Stepper(disc, params, strategy, newton, reactive=scenario.reactive)
        new, stats = stepper.step(state, t_new, n + 1)
        verdict = None
        rec = _record(n + 1, disc, new, state, params, stats, None)
        if controls.energy_audit and homogeneous_velocity_at(scenario, params, t_new):
            prev_energy = records[-1].energy
            verdict = check_dissipation(prev_energy, rec.energy, params.tau, stats.max_tol)
            rec.verdict = verdict
        records.append(rec)
        if keep_states:
            states.append(new)
        if callback:
            callback(rec, new, disc)
        state = new
    return SimulationResult(records, states, state, disc)
