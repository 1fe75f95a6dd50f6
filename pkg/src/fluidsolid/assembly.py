"""Residual and Jacobian of the fully discrete Cahn-Hilliard Navier-Stokes step.

Unknowns are stacked as ``(phi, mu[, c], v_x, v_y, p)``: the Cahn-Hilliard
block (with the concentration when the reactive model is active) comes
first, the Navier-Stokes block second.  All volume integrals use one
quadrature rule (degree 5 by default) and no lumping.

Every equation is written pointwise as ``f0 * test + f1 . grad(test)``; the
Jacobian is assembled from the analytic derivatives of ``f0``/``f1`` with
respect to trial values and trial gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import physics as ph
from .fespace import Field, ScalarSpaceP1, VectorSpaceP2, p2_dlambda, p2_values, quadrature
from .mesh import BOUNDARY_NAMES, TriMesh, p1_gradients
from .physics import ModelParams


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass
class BoundaryConditions:
    """Which boundary parts carry Dirichlet data for each unknown.

    ``velocity(points, t)`` returns an (N, 2) array; ``None`` means zero.
    Without pressure Dirichlet tags and with the velocity prescribed on the
    whole boundary the pressure is fixed by pinning one dof.
    """

    velocity_tags: tuple = BOUNDARY_NAMES
    velocity: Callable[[np.ndarray, float], np.ndarray] | None = None
    pressure_tags: tuple = ()
    pressure_value: float = 0.0
    phi_tags: tuple = ()
    phi_value: float = 1.0
    c_tags: tuple = ()
    c_value: float = 1.0

    @property
    def pin_pressure(self) -> bool:
        return not self.pressure_tags and set(self.velocity_tags) >= set(BOUNDARY_NAMES)


@dataclass
class SystemState:
    p: Field
    v: Field
    phi: Field
    mu: Field
    c: Field | None = None
    time: float = 0.0

    def copy(self) -> "SystemState":
        return SystemState(self.p.copy(), self.v.copy(), self.phi.copy(), self.mu.copy(),
                           None if self.c is None else self.c.copy(), self.time)


@dataclass
class BlockSystem:
    """Newton system ``matrix @ dx = rhs`` with ``rhs = -residual``."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    ch_index: np.ndarray
    ns_index: np.ndarray

    @property
    def n_ch(self) -> int:
        return len(self.ch_index)

    @property
    def n_ns(self) -> int:
        return len(self.ns_index)


def extract_blocks(system: BlockSystem):
    """Return ``(A_CH, A_NS, C_T, C_I)`` as CSR matrices."""
    A = system.matrix
    ch, ns = system.ch_index, system.ns_index
    rows_ch = A[ch]
    rows_ns = A[ns]
    return (rows_ch[:, ch].tocsr(), rows_ns[:, ns].tocsr(),
            rows_ch[:, ns].tocsr(), rows_ns[:, ch].tocsr())


# ---------------------------------------------------------------------------
class Discretization:
    """Spaces, quadrature data, dof layout and sparsity pattern for one mesh."""

    def __init__(self, mesh: TriMesh, bcs: BoundaryConditions | None = None,
                 reactive: bool = False, quad_degree: int = 5):
        self.mesh = mesh
        self.bcs = bcs or BoundaryConditions()
        self.reactive = reactive
        self.p1 = ScalarSpaceP1(mesh)
        self.vspace = VectorSpaceP2(mesh, self.bcs.velocity_tags)
        nv = self.p1.ndofs
        n2 = self.vspace.scalar.ndofs
        self.nv, self.n2 = nv, n2

        names = ["phi", "mu"] + (["c"] if reactive else []) + ["vx", "vy", "p"]
        sizes = {"phi": nv, "mu": nv, "c": nv, "vx": n2, "vy": n2, "p": nv}
        self.offsets = {}
        off = 0
        for n in names:
            self.offsets[n] = off
            off += sizes[n]
        self.field_names = names
        self.sizes = sizes
        self.ndofs = off
        self.slices = {n: slice(self.offsets[n], self.offsets[n] + sizes[n]) for n in names}
        ch_names = ["phi", "mu"] + (["c"] if reactive else [])
        self.ch_index = np.concatenate([np.arange(self.slices[n].start, self.slices[n].stop) for n in ch_names])
        self.ns_index = np.arange(self.offsets["vx"], self.ndofs)

        # quadrature data
        q = quadrature(quad_degree)
        self.quad = q
        self.W = np.abs(mesh.signed_areas())[:, None] * (2.0 * q.weights)[None, :]  # (T, Q)
        self.N1 = q.points.copy()  # (Q, 3)
        self.N2 = p2_values(q.points)  # (Q, 6)
        self.G1c = p1_gradients(mesh)  # (T, 3, 2)
        T, Q = self.W.shape
        self.G1 = np.broadcast_to(self.G1c[:, None], (T, Q, 3, 2))
        self.G2 = np.einsum("qak,tkd->tqad", p2_dlambda(q.points), self.G1c)
        self.cells1 = mesh.triangles
        self.cells2 = self.vspace.scalar.cell_dofs
        self._basis = {1: (self.N1, self.G1), 2: (self.N2, self.G2)}
        self._gg = {
            (1, 1): np.einsum("tid,tjd->tij", self.G1c, self.G1c)[:, None].repeat(Q, axis=1),
            (2, 2): np.einsum("tqid,tqjd->tqij", self.G2, self.G2),
            (1, 2): np.einsum("tqid,tqjd->tqij", self.G1, self.G2),
            (2, 1): np.einsum("tqid,tqjd->tqij", self.G2, self.G1),
        }
        self._nn = {(a, b): np.einsum("qi,qj->qij", self._basis[a][0], self._basis[b][0])
                    for a in (1, 2) for b in (1, 2)}
        self._visc_cache: dict[float, dict] = {}

        self._build_dirichlet()
        self._build_pattern()

    # -- dof bookkeeping ------------------------------------------------
    def degree(self, name: str) -> int:
        return 2 if name in ("vx", "vy") else 1

    def cells(self, name: str) -> np.ndarray:
        return (self.cells2 if self.degree(name) == 2 else self.cells1) + self.offsets[name]

    def _build_dirichlet(self):
        b = self.bcs
        idx, kinds = [], []
        vb = self.vspace.boundary_dof_index
        idx.append(vb + self.offsets["vx"])
        kinds.append(("v", len(vb)))
        if b.pressure_tags:
            pb = self.p1.boundary_dofs(b.pressure_tags)
            idx.append(pb + self.offsets["p"])
            kinds.append(("p", len(pb)))
        elif b.pin_pressure:
            idx.append(np.array([self.offsets["p"]]))
            kinds.append(("pin", 1))
        if b.phi_tags:
            fb = self.p1.boundary_dofs(b.phi_tags)
            idx.append(fb + self.offsets["phi"])
            kinds.append(("phi", len(fb)))
        if self.reactive and b.c_tags:
            cb = self.p1.boundary_dofs(b.c_tags)
            idx.append(cb + self.offsets["c"])
            kinds.append(("c", len(cb)))
        self.dirichlet_index = np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)
        self._dirichlet_kinds = kinds
        mask = np.zeros(self.ndofs, dtype=bool)
        mask[self.dirichlet_index] = True
        self.dirichlet_mask = mask

    def dirichlet_values(self, t: float, old: np.ndarray | None = None, velocity_on: bool = True) -> np.ndarray:
        out = []
        for kind, n in self._dirichlet_kinds:
            if kind == "v":
                ev = None
                if velocity_on and self.bcs.velocity is not None:
                    ev = lambda pts: self.bcs.velocity(pts, t)  # noqa: E731
                out.append(self.vspace.boundary_values(ev))
            elif kind == "p":
                out.append(np.full(n, self.bcs.pressure_value))
            elif kind == "pin":
                out.append(np.array([0.0 if old is None else old[self.offsets["p"]]]))
            elif kind == "phi":
                out.append(np.full(n, self.bcs.phi_value))
            elif kind == "c":
                out.append(np.full(n, self.bcs.c_value))
        return np.concatenate(out) if out else np.zeros(0)

    # -- sparsity ---------------------------------------------------------
    def coupling(self):
        ns = ["vx", "vy"]
        pairs = [("p", f) for f in ["phi"] + ns + ["p"]]
        pairs += [("phi", f) for f in ["phi", "mu"] + ns]
        pairs += [("mu", "phi"), ("mu", "mu")]
        if self.reactive:
            pairs.append(("phi", "c"))
            pairs += [("c", f) for f in ["phi", "mu", "c"] + ns]
        for v in ns:
            pairs += [(v, f) for f in ["phi", "mu"] + ns + ["p"]]
            if self.reactive:
                pairs.append((v, "c"))
        return pairs

    def _build_pattern(self):
        rows, cols = [], []
        self._pair_slices = {}
        start = 0
        for a, b in self.coupling():
            ca, cb = self.cells(a), self.cells(b)
            r = np.broadcast_to(ca[:, :, None], (len(ca), ca.shape[1], cb.shape[1]))
            c = np.broadcast_to(cb[:, None, :], r.shape)
            rows.append(r.ravel())
            cols.append(c.ravel())
            self._pair_slices[(a, b)] = (start, start + r.size)
            start += r.size
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        key = rows * self.ndofs + cols
        uniq, inv = np.unique(key, return_inverse=True)
        self._scatter = inv
        self._nnz = len(uniq)
        pr = uniq // self.ndofs
        pc = uniq % self.ndofs
        self.indptr = np.r_[0, np.cumsum(np.bincount(pr, minlength=self.ndofs))].astype(np.int64)
        self.indices = pc.astype(np.int64)
        self._dir_rows_pos = np.flatnonzero(self.dirichlet_mask[pr])
        self._dir_diag_pos = np.flatnonzero(self.dirichlet_mask[pr] & (pr == pc))
        self._pattern_rows = pr

    # -- state <-> vector ------------------------------------------------
    def pack(self, state: SystemState) -> np.ndarray:
        x = np.empty(self.ndofs)
        x[self.slices["phi"]] = state.phi.coefficients
        x[self.slices["mu"]] = state.mu.coefficients
        if self.reactive:
            if state.c is None:
                raise DimensionError("reactive discretization requires a concentration field")
            x[self.slices["c"]] = state.c.coefficients
        v = state.v.coefficients
        if v.shape != (2 * self.n2,) or state.phi.coefficients.shape != (self.nv,):
            raise DimensionError("state does not live on this discretization's spaces")
        x[self.slices["vx"]] = v[: self.n2]
        x[self.slices["vy"]] = v[self.n2:]
        x[self.slices["p"]] = state.p.coefficients
        return x

    def unpack(self, x: np.ndarray, time: float) -> SystemState:
        c = Field(self.p1, x[self.slices["c"]].copy()) if self.reactive else None
        v = np.concatenate([x[self.slices["vx"]], x[self.slices["vy"]]])
        return SystemState(Field(self.p1, x[self.slices["p"]].copy()), Field(self.vspace, v),
                           Field(self.p1, x[self.slices["phi"]].copy()),
                           Field(self.p1, x[self.slices["mu"]].copy()), c, time)

    # -- quadrature-point values -----------------------------------------
    def p1_at_quad(self, coeffs: np.ndarray):
        e = coeffs[self.cells1]
        return e @ self.N1.T, np.einsum("tk,tkd->td", e, self.G1c)

    def p2_at_quad(self, coeffs: np.ndarray):
        e = coeffs[self.cells2]
        return e @ self.N2.T, np.einsum("ta,tqad->tqd", e, self.G2)

    def fields_at_quad(self, x: np.ndarray) -> dict:
        out = {}
        for n in ("phi", "mu", "c", "p"):
            if n in self.slices:
                out[n], out["g" + n] = self.p1_at_quad(x[self.slices[n]])
        vx, gvx = self.p2_at_quad(x[self.slices["vx"]])
        vy, gvy = self.p2_at_quad(x[self.slices["vy"]])
        out["v"] = np.stack([vx, vy], axis=-1)  # (T, Q, 2)
        out["gv"] = np.stack([gvx, gvy], axis=-2)  # (T, Q, comp, deriv)
        return out

    def integrate(self, values: np.ndarray) -> float:
        """Quadrature sum of values given at the (T, Q) points."""
        return float(np.sum(self.W * values))

    # -- local kernels ---------------------------------------------------
    def _vec(self, deg, f0=None, f1=None):
        """Local residual contribution ``sum_q W (f0 N_i + f1 . grad N_i)``."""
        N, G = self._basis[deg]
        out = 0.0
        if f0 is not None:
            out = out + (self.W * f0) @ N
        if f1 is not None:
            wf1 = self.W[..., None] * f1
            if deg == 1:
                out = out + np.einsum("td,tid->ti", wf1.sum(axis=1), self.G1c)
            else:
                out = out + np.einsum("tqd,tqid->ti", wf1, G)
        return out

    def _mat(self, dt, ds, a00=None, a01=None, a10=None, a11=None):
        """Local block for test degree ``dt`` and trial degree ``ds``.

        ``a00`` (T,Q): value-value; ``a01`` (T,Q,2): test value, trial
        gradient; ``a10`` (T,Q,2): test gradient, trial value; ``a11`` (T,Q):
        isotropic gradient-gradient coefficient.
        """
        Nt, Gt = self._basis[dt]
        Ns, Gs = self._basis[ds]
        W = self.W
        K = 0.0
        if a00 is not None:
            K = K + np.einsum("tq,qij->tij", W * a00, self._nn[(dt, ds)])
        if a01 is not None:
            tmp = np.einsum("tqd,tqjd->tqj", W[..., None] * a01, Gs)
            K = K + np.einsum("tqj,qi->tij", tmp, Nt)
        if a10 is not None:
            tmp = np.einsum("tqd,tqid->tqi", W[..., None] * a10, Gt)
            K = K + np.einsum("tqi,qj->tij", tmp, Ns)
        if a11 is not None:
            K = K + np.einsum("tq,tqij->tij", W * a11, self._gg[(dt, ds)])
        return K

    def viscous_blocks(self, gamma: float) -> dict:
        """Constant local blocks of ``2 gamma sym(grad v) : grad w``."""
        if gamma not in self._visc_cache:
            G, W = self.G2, self.W
            blocks = {}
            for c in range(2):
                for d in range(2):
                    # gamma (delta_cd grad xi_i . grad xi_j + d_d xi_i d_c xi_j)
                    K = np.einsum("tq,tqi,tqj->tij", W, G[..., d], G[..., c])
                    if c == d:
                        K = K + np.einsum("tq,tqij->tij", W, self._gg[(2, 2)])
                    blocks[(c, d)] = gamma * K
            self._visc_cache = {gamma: blocks}
        return self._visc_cache[gamma]

    def csr(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()),
                             shape=(self.ndofs, self.ndofs))


# ---------------------------------------------------------------------------
class StepProblem:
    """Residual/Jacobian of one time step ``old -> new`` as functions of a vector.

    ``velocity_on`` toggles the non-homogeneous velocity data (lid/inlet);
    ``preprocessing`` assembles only the Cahn-Hilliard rows with the
    preprocessing mobility and no transport.
    """

    def __init__(self, disc: Discretization, old: SystemState, params: ModelParams,
                 time: float, preprocessing: bool = False, reactive: bool = False,
                 velocity_on: bool = True):
        if reactive and not disc.reactive:
            raise DimensionError("reactive assembly requires a reactive discretization")
        self.disc = disc
        self.params = params
        self.time = time
        self.preprocessing = preprocessing
        self.reactive = reactive
        self.x_old = disc.pack(old)
        _check_finite(self.x_old)
        self.old = disc.fields_at_quad(self.x_old)
        self.dir_values = disc.dirichlet_values(time, self.x_old, velocity_on)
        o = self.old
        pr = params
        self.kM = ph.ch_flux_coeff(pr, preprocessing)
        self.drag_old = ph.drag(ph.fluid_fraction(o["phi"], pr), pr)
        self.q_old = ph.reaction_localization(o["phi"])

    # -- helpers --------------------------------------------------------
    def impose_dirichlet(self, x: np.ndarray) -> np.ndarray:
        x = x.copy()
        x[self.disc.dirichlet_index] = self.dir_values
        return x

    def initial_guess(self) -> np.ndarray:
        return self.impose_dirichlet(self.x_old)

    def _reaction(self, u):
        pr = self.params
        if not self.reactive:
            return 0.0, 0.0
        R = -self.q_old / pr.epsilon * ph.reaction_rate(u["c"], pr)
        dR = -self.q_old / pr.epsilon * ph.reaction_rate_prime(u["c"], pr)
        return R, dR

    # -- residual -------------------------------------------------------
    def residual(self, x: np.ndarray) -> np.ndarray:
        _check_finite(x)
        d, pr, o = self.disc, self.params, self.old
        u = d.fields_at_quad(x)
        tau, rho, dl, eps = pr.tau, pr.rho, pr.delta, pr.epsilon
        a = 1 - 2 * dl
        kM = self.kM
        r = np.zeros(d.ndofs)

        def add(name, local):
            _scatter_add(r, d.cells(name), local)

        R, _ = self._reaction(u)
        gmu = u["gmu"][:, None, :]
        transport = 0.0 if self.preprocessing else o["phi"][..., None] * u["v"]
        # phase field
        add("phi", d._vec(1, f0=(u["phi"] - o["phi"]) / tau - R, f1=kM * gmu - transport))
        # chemical potential
        Wp = ph.double_well_split_prime(u["phi"], o["phi"], pr)
        add("mu", d._vec(1, f0=u["mu"] - Wp / eps, f1=np.broadcast_to(-eps * u["gphi"][:, None, :], u["v"].shape)))
        if self.reactive:
            cs = pr.c_star
            f0 = ((u["phi"] + dl) * (u["c"] - cs) - (o["phi"] + dl) * (o["c"] - cs)) / tau
            f1 = ((u["c"] - cs)[..., None] * (kM * gmu - o["phi"][..., None] * u["v"])
                  + pr.D * (o["phi"] + dl)[..., None] * u["gc"][:, None, :])
            add("c", d._vec(1, f0=f0, f1=f1))

        if not self.preprocessing:
            v, gv, vo, gvo = u["v"], u["gv"], o["v"], o["gv"]
            phit = ph.fluid_fraction(u["phi"], pr)
            gphi = u["gphi"][:, None, :]
            div = gv[..., 0, 0] + gv[..., 1, 1]
            add("p", d._vec(1, f0=-(phit * div + a * np.sum(gphi * v, axis=-1))))
            rt = rho * (u["phi"] + dl)
            rto = rho * (o["phi"] + dl)
            A1 = rho * o["phi"][..., None] * v - rho * kM * gmu
            Ao = rho * o["phi"][..., None] * vo - rho * kM * o["gmu"][:, None, :]
            p = u["p"]
            for c, name in enumerate(("vx", "vy")):
                f0 = (0.5 * (rto + rt) * (v[..., c] - vo[..., c]) / tau
                      + 0.5 * np.sum(A1 * gvo[..., c, :], axis=-1)
                      + 0.5 * np.sum(Ao * gv[..., c, :], axis=-1)
                      - a * p * gphi[..., c]
                      + rho * self.drag_old * v[..., c]
                      + pr.sigma * o["phi"] * gmu[..., c])
                if self.reactive:
                    f0 = f0 - 0.5 * rho * R * v[..., c]
                f1 = (0.5 * A1 * vo[..., c, None] - 0.5 * Ao * v[..., c, None]
                      + pr.gamma * (gv[..., c, :] + gv[..., :, c]))
                f1[..., c] -= p * phit
                add(name, d._vec(2, f0=f0, f1=f1))
        dmask = d.dirichlet_index
        r[dmask] = x[dmask] - self.dir_values
        if self.preprocessing:
            r[d.ns_index] = 0.0
            if self.disc.reactive:
                r[d.slices["c"]] = 0.0
        return r

    # -- jacobian -------------------------------------------------------
    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        _check_finite(x)
        d, pr, o = self.disc, self.params, self.old
        u = d.fields_at_quad(x)
        tau, rho, dl, eps = pr.tau, pr.rho, pr.delta, pr.epsilon
        a = 1 - 2 * dl
        kM = self.kM
        T, Q = d.W.shape
        one = np.ones((T, Q))
        ex = np.zeros((T, Q, 2))
        ex[..., 0] = 1.0
        ey = np.zeros((T, Q, 2))
        ey[..., 1] = 1.0
        e = (ex, ey)
        blocks: dict = {}
        R, dR = self._reaction(u)

        blocks[("phi", "phi")] = d._mat(1, 1, a00=one / tau)
        blocks[("phi", "mu")] = d._mat(1, 1, a11=kM * one)
        blocks[("mu", "mu")] = d._mat(1, 1, a00=one)
        blocks[("mu", "phi")] = d._mat(1, 1, a00=-ph.convex_second(u["phi"], pr) / eps, a11=-eps * one)
        if self.reactive:
            blocks[("phi", "c")] = d._mat(1, 1, a00=-dR)
            cs = pr.c_star
            cm = u["c"] - cs
            blocks[("c", "phi")] = d._mat(1, 1, a00=cm / tau)
            blocks[("c", "c")] = d._mat(1, 1, a00=(u["phi"] + dl) / tau,
                                        a10=kM * np.broadcast_to(u["gmu"][:, None, :], (T, Q, 2))
                                        - o["phi"][..., None] * u["v"],
                                        a11=pr.D * (o["phi"] + dl))
            blocks[("c", "mu")] = d._mat(1, 1, a11=kM * cm)
            for c, name in enumerate(("vx", "vy")):
                blocks[("c", name)] = d._mat(1, 2, a10=-(o["phi"] * cm)[..., None] * e[c])

        if not self.preprocessing:
            v, gv, vo, gvo = u["v"], u["gv"], o["v"], o["gv"]
            phit = ph.fluid_fraction(u["phi"], pr)
            gphi = np.broadcast_to(u["gphi"][:, None, :], (T, Q, 2))
            div = gv[..., 0, 0] + gv[..., 1, 1]
            blocks[("p", "phi")] = d._mat(1, 1, a00=-a * div, a01=-a * v)
            for c, name in enumerate(("vx", "vy")):
                blocks[("p", name)] = d._mat(1, 2, a00=-a * gphi[..., c], a01=-phit[..., None] * e[c])
                blocks[("phi", name)] = d._mat(1, 2, a10=-o["phi"][..., None] * e[c])
            rt = rho * (u["phi"] + dl)
            rto = rho * (o["phi"] + dl)
            Ao = rho * o["phi"][..., None] * vo - rho * kM * o["gmu"][:, None, :]
            p = u["p"]
            visc = d.viscous_blocks(pr.gamma)
            diag = 0.5 * (rto + rt) / tau + rho * self.drag_old
            if self.reactive:
                diag = diag - 0.5 * rho * R
            for c, name in enumerate(("vx", "vy")):
                blocks[(name, "phi")] = d._mat(2, 1, a00=0.5 * rho * (v[..., c] - vo[..., c]) / tau,
                                               a01=-a * p[..., None] * e[c], a10=-a * p[..., None] * e[c])
                blocks[(name, "mu")] = d._mat(2, 1, a01=-0.5 * rho * kM * gvo[..., c, :]
                                              + pr.sigma * o["phi"][..., None] * e[c],
                                              a11=-0.5 * rho * kM * vo[..., c])
                for dd, nd in enumerate(("vx", "vy")):
                    a00 = 0.5 * rho * o["phi"] * gvo[..., c, dd]
                    a10 = 0.5 * rho * (o["phi"] * vo[..., c])[..., None] * e[dd]
                    if c == dd:
                        a00 = a00 + diag
                        K = d._mat(2, 2, a00=a00, a01=0.5 * Ao, a10=a10 - 0.5 * Ao)
                    else:
                        K = d._mat(2, 2, a00=a00, a10=a10)
                    blocks[(name, nd)] = K + visc[(c, dd)]
                blocks[(name, "p")] = d._mat(2, 1, a00=-a * gphi[..., c], a10=-phit[..., None] * e[c])
                if self.reactive:
                    blocks[(name, "c")] = d._mat(2, 1, a00=-0.5 * rho * v[..., c] * dR)

        vals = np.zeros(len(d._scatter))
        for key, (s0, s1) in d._pair_slices.items():
            blk = blocks.get(key)
            if blk is not None:
                vals[s0:s1] = blk.ravel()
        data = np.bincount(d._scatter, weights=vals, minlength=d._nnz)
        data[d._dir_rows_pos] = 0.0
        data[d._dir_diag_pos] = 1.0
        if self.preprocessing:
            # rows whose residual is identically zero in this mode
            frozen = np.zeros(d.ndofs, dtype=bool)
            frozen[d.ns_index] = True
            if d.reactive:
                frozen[d.slices["c"]] = True
            data[frozen[d._pattern_rows]] = 0.0
        return d.csr(data)

    def block_system(self, x: np.ndarray) -> BlockSystem:
        return BlockSystem(self.jacobian(x), -self.residual(x), self.disc.ch_index, self.disc.ns_index)


def _scatter_add(r, cells, local):
    r += np.bincount(cells.ravel(), weights=np.asarray(local).ravel(), minlength=len(r))


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite coefficients in assembly input")


# ---------------------------------------------------------------------------
# functional interface
# ---------------------------------------------------------------------------
def _problem(disc, old, guess, params, preprocessing, reactive, velocity_on=True):
    if guess.phi.space.mesh is not old.phi.space.mesh or guess.v.coefficients.shape != old.v.coefficients.shape:
        raise DimensionError("old and guess states live on different spaces")
    return StepProblem(disc, old, params, guess.time, preprocessing, reactive, velocity_on)


def assemble_residual(disc: Discretization, old: SystemState, guess: SystemState, params: ModelParams,
                      preprocessing: bool = False, reactive: bool = False) -> np.ndarray:
    prob = _problem(disc, old, guess, params, preprocessing, reactive)
    return prob.residual(disc.pack(guess))


def assemble_jacobian(disc: Discretization, old: SystemState, guess: SystemState, params: ModelParams,
                      preprocessing: bool = False, reactive: bool = False) -> BlockSystem:
    prob = _problem(disc, old, guess, params, preprocessing, reactive)
    return prob.block_system(disc.pack(guess))
