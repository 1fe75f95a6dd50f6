"""Sparse linear solvers: direct LU, flexible GMRES, ILU(0) and a SIMPLE
block preconditioner for the Cahn-Hilliard sub-system.

Matrices are ``scipy.sparse`` CSR matrices.  The direct solver delegates to
UMFPACK (through cvxopt); the iterative pieces are implemented here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from cvxopt import umfpack

import cvxopt
import numba
import numpy as np
import scipy.io
import scipy.sparse as sp


class SingularMatrixError(ArithmeticError):
    pass


@dataclass
class IterativeStats:
    iterations: int
    final_residual: float
    breakdown: bool = False
    converged: bool = True
    history: list = field(default_factory=list)


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR copy: sorted column indices, no duplicates."""
    A = sp.csr_matrix(A, dtype=float, copy=True)
    A.sum_duplicates()
    A.sort_indices()
    return A


# ---------------------------------------------------------------------------
# direct
# ---------------------------------------------------------------------------
class LUFactor:
    """Sparse LU factorization with approximate-minimum-degree ordering (UMFPACK)."""

    def __init__(self, A):
        A = sp.coo_matrix(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        A.sum_duplicates()
        A.eliminate_zeros()
        self._A = cvxopt.spmatrix(cvxopt.matrix(A.data), cvxopt.matrix(A.row.astype(int)),
                                  cvxopt.matrix(A.col.astype(int)), A.shape)
        try:
            self._numeric = umfpack.numeric(self._A, umfpack.symbolic(self._A))
        except ArithmeticError as exc:
            raise SingularMatrixError(str(exc)) from exc
        self.shape = A.shape

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = cvxopt.matrix(np.array(b, dtype=float).reshape(-1, 1))
        umfpack.solve(self._A, self._numeric, x)
        return np.array(x).ravel()

    __call__ = solve


def lu_solve(A, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if A.shape[0] == 0:
        return b.copy()
    return LUFactor(A).solve(b)


def cond1_exact(A) -> float:
    """``||A||_1 ||A^{-1}||_1`` by dense inversion (small matrices only)."""
    D = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    try:
        inv = np.linalg.inv(D)
    except np.linalg.LinAlgError:
        return float("inf")
    if not np.all(np.isfinite(inv)):
        return float("inf")
    return float(np.linalg.norm(D, 1) * np.linalg.norm(inv, 1))


def export_matrix_market(path, A) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))


# ---------------------------------------------------------------------------
# ILU(0)
# ---------------------------------------------------------------------------
@numba.njit(cache=True)
def _ilu0_kernel(n, indptr, indices, data, shift):
    diag = np.empty(n, dtype=np.int64)
    for i in range(n):
        diag[i] = -1
        for p in range(indptr[i], indptr[i + 1]):
            if indices[p] == i:
                diag[i] = p
                break
    shifted = 0
    pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if diag[i] < 0:
            return diag, -1
        for p in range(indptr[i], indptr[i + 1]):
            pos[indices[p]] = p
        for p in range(indptr[i], diag[i]):
            k = indices[p]
            data[p] /= data[diag[k]]
            lik = data[p]
            for q in range(diag[k] + 1, indptr[k + 1]):
                j = indices[q]
                pj = pos[j]
                if pj >= 0:
                    data[pj] -= lik * data[q]
        if data[diag[i]] == 0.0:
            data[diag[i]] = shift
            shifted += 1
        for p in range(indptr[i], indptr[i + 1]):
            pos[indices[p]] = -1
    return diag, shifted


@numba.njit(cache=True)
def _ilu0_apply(n, indptr, indices, data, diag, b):
    y = b.copy()
    for i in range(n):
        s = y[i]
        for p in range(indptr[i], diag[i]):
            s -= data[p] * y[indices[p]]
        y[i] = s
    for i in range(n - 1, -1, -1):
        s = y[i]
        for p in range(diag[i] + 1, indptr[i + 1]):
            s -= data[p] * y[indices[p]]
        y[i] = s / data[diag[i]]
    return y


class ILU0:
    """Incomplete LU factorization restricted to the pattern of ``A``.

    ``L`` (unit lower) and ``U`` share the storage of ``A``.  Zero pivots are
    replaced by ``1e-12 * ||A||_inf``; :attr:`shifted` counts them.
    """

    def __init__(self, A):
        A = as_csr(A)
        n = A.shape[0]
        if A.shape[1] != n:
            raise ValueError("matrix must be square")
        self.n = n
        self.indptr = A.indptr.astype(np.int64)
        self.indices = A.indices.astype(np.int64)
        norm_inf = float(np.max(np.abs(A).sum(axis=1))) if A.nnz else 1.0
        shift = 1e-12 * (norm_inf if norm_inf > 0 else 1.0)
        self.data = A.data.copy()
        self.diag, shifted = _ilu0_kernel(n, self.indptr, self.indices, self.data, shift)
        if shifted < 0:
            raise SingularMatrixError("ILU(0) requires every diagonal entry in the pattern")
        self.shifted = int(shifted)

    @property
    def flagged(self) -> bool:
        return self.shifted > 0

    def solve(self, b: np.ndarray) -> np.ndarray:
        return _ilu0_apply(self.n, self.indptr, self.indices, self.data, self.diag,
                           np.asarray(b, dtype=float))

    __call__ = solve

    def factors(self):
        """Return ``(L, U)`` as CSR matrices (L with unit diagonal)."""
        M = sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))
        L = sp.tril(M, -1, format="csr") + sp.identity(self.n, format="csr")
        U = sp.triu(M, 0, format="csr")
        return L, U


def ilu0(A) -> ILU0:
    return ILU0(A)


# ---------------------------------------------------------------------------
# FGMRES
# ---------------------------------------------------------------------------
def _as_operator(A) -> Callable[[np.ndarray], np.ndarray]:
    if callable(A) and not sp.issparse(A) and not isinstance(A, np.ndarray):
        return A
    return lambda x: A @ x


def fgmres(A, b, preconditioner=None, restart: int = 200, target_reduction: float = 1e-8,
           max_iter: int = 1000, x0: np.ndarray | None = None):
    """Right-preconditioned flexible restarted GMRES.

    The preconditioner may change between iterations; the preconditioned
    directions are stored, which is what makes the method flexible.

    Returns
    -------
    x, IterativeStats
        ``stats.final_residual`` is ``||b - A x|| / ||b||``.
    """
    op = _as_operator(A)
    prec = (lambda v: v) if preconditioner is None else preconditioner
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), IterativeStats(0, 0.0)
    history = []
    target = target_reduction * bnorm
    r = b - op(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    total = 0
    breakdown = False
    while beta > target and total < max_iter:
        m = restart
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_used = 0
        for j in range(m):
            Z[j] = prec(V[j])
            w = op(Z[j])
            for i in range(j + 1):  # modified Gram-Schmidt
                H[i, j] = np.dot(w, V[i])
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            den = np.hypot(H[j, j], H[j + 1, j])
            if den == 0.0:
                breakdown = True
                j_used = j
                break
            cs[j], sn[j] = H[j, j] / den, H[j + 1, j] / den
            hj1 = H[j + 1, j]
            H[j, j] = den
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_used = j + 1
            history.append(abs(g[j + 1]) / bnorm)
            if hj1 <= 1e-14 * den:  # happy breakdown: Krylov space is invariant
                breakdown = True
                break
            V[j + 1] = w / hj1
            if abs(g[j + 1]) <= target or total >= max_iter:
                break
        k = j_used
        if k > 0:
            y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k > 1 else g[:1] / H[0, 0]
            x = x + Z[:k].T @ y
        r = b - op(x)
        beta = np.linalg.norm(r)
        if breakdown or k == 0:
            break
    rel = beta / bnorm
    return x, IterativeStats(total, float(rel), breakdown, bool(rel <= target_reduction * (1 + 1e-8)), history)


# ---------------------------------------------------------------------------
# SIMPLE preconditioner
# ---------------------------------------------------------------------------
class SimplePreconditioner:
    """SIMPLE block preconditioner for ``[[A11, A12], [A21, A22]]``.

    ``A11`` is the phase-field block and is approximated by its diagonal
    ``D``.  One application computes::

        y1 = D^{-1} b1
        S  y2 = b2 - A21 y1,     S = A22 - A21 D^{-1} A12
        x1 = y1 - D^{-1} A12 y2

    ``S`` is sparse and is factorized once (``schur_solver="lu"``) or
    approximated by ILU(0) (``"ilu"``).
    """

    def __init__(self, A, n1: int, schur_solver: str = "lu"):
        A = as_csr(A)
        self.n1 = n1
        A11 = A[:n1, :n1]
        self.A12 = A[:n1, n1:].tocsr()
        self.A21 = A[n1:, :n1].tocsr()
        A22 = A[n1:, n1:].tocsr()
        d = A11.diagonal().copy()
        scale = np.max(np.abs(d)) if d.size else 1.0
        zero = d == 0.0
        self.shifted = int(zero.sum())
        d[zero] = 1e-12 * (scale if scale > 0 else 1.0)
        self.dinv = 1.0 / d
        S = (A22 - self.A21 @ sp.diags(self.dinv) @ self.A12).tocsr()
        if schur_solver == "lu":
            self._schur = LUFactor(S)
        elif schur_solver == "ilu":
            self._schur = ILU0(S)
        else:
            raise ValueError(f"unknown schur_solver {schur_solver!r}")

    def __call__(self, b: np.ndarray) -> np.ndarray:
        b1, b2 = b[: self.n1], b[self.n1:]
        y1 = self.dinv * b1
        y2 = self._schur.solve(b2 - self.A21 @ y1)
        x1 = y1 - self.dinv * (self.A12 @ y2)
        return np.concatenate([x1, y2])


def simple_precond(A, n1: int, schur_solver: str = "lu") -> SimplePreconditioner:
    return SimplePreconditioner(A, n1, schur_solver)


# ---------------------------------------------------------------------------
# linear-solver callables for the Newton iteration
# ---------------------------------------------------------------------------
class DirectLinearSolver:
    """``(J, rhs, lin_red) -> (dx, 1)`` using a fresh LU per call."""

    def __call__(self, J, rhs, lin_red):
        return lu_solve(J, rhs), 1


class IterativeLinearSolver:
    """FGMRES with a preconditioner built from ``J`` by ``factory``."""

    def __init__(self, factory: Callable, restart: int = 200, max_iter: int = 1000):
        self.factory = factory
        self.restart = restart
        self.max_iter = max_iter

    def __call__(self, J, rhs, lin_red):
        prec = self.factory(J)
        x, st = fgmres(J, rhs, prec, self.restart, lin_red, self.max_iter)
        if not st.converged:
            raise SingularMatrixError(
                f"FGMRES did not reach reduction {lin_red:.1e} in {st.iterations} iterations "
                f"(relative residual {st.final_residual:.2e})")
        return x, st.iterations
