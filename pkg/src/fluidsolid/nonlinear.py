"""Damped Newton iteration with an adaptive inner-solver tolerance.

The solver is generic: it only sees callables for the residual, the
Jacobian and a linear solve, so it works on the full coupled system, on a
single sub-system of a partitioned step, and on scalar toy problems.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed; the message carries the context."""


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    """Newton and line-search controls.

    Attributes
    ----------
    m_N : int
        Maximum number of Newton iterations.
    relTol, absTol : float
        The stop tolerance is ``max(relTol * ||r0||, absTol)``.
    minLinRed : float
        Upper bound for the relative reduction requested from the linear solver.
    m_LS : int
        Maximum number of trial step lengths in the line search.
    d_LS : float
        Geometric damping factor of the line search, in (0, 1).
    """

    m_N: int = 100
    relTol: float = 1e-7
    absTol: float = 1e-9
    minLinRed: float = 1e-3
    m_LS: int = 100
    d_LS: float = 0.5

    def __post_init__(self):
        for name in ("m_N", "relTol", "absTol", "minLinRed", "m_LS", "d_LS"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.d_LS < 1:
            raise ValueError("d_LS must lie in (0, 1)")


@dataclass
class NewtonStats:
    iterations: int = 0
    residual_norms: list = field(default_factory=list)
    line_search_steps: list = field(default_factory=list)
    linear_iterations: list = field(default_factory=list)
    converged: bool = False
    max_tol: float = 0.0
    line_search_failures: int = 0

    @property
    def total_linear_iterations(self) -> int:
        return int(sum(self.linear_iterations))


def stop_tolerance(r0_norm: float, config: NewtonConfig) -> float:
    return max(r0_norm * config.relTol, config.absTol)


def linear_reduction(norm: float, prev_norm: float | None, max_tol: float, config: NewtonConfig) -> float:
    """Relative reduction requested from the linear solver at one iteration."""
    ratio = config.minLinRed if prev_norm is None else (norm / prev_norm) ** 2
    return max(max_tol / (10.0 * norm), min(config.minLinRed, ratio))


def _norm(r) -> float:
    n = float(np.linalg.norm(np.atleast_1d(r)))
    if not np.isfinite(n):
        raise NumericError("non-finite residual")
    return n


def newton_solve(residual_fn: Callable[[Any], np.ndarray],
                 jacobian_fn: Callable[[Any], Any],
                 linear_solver: Callable[[Any, np.ndarray, float], tuple],
                 x0, config: NewtonConfig = NewtonConfig(),
                 max_tol: float | None = None):
    """Solve ``residual_fn(x) = 0``.

    Parameters
    ----------
    residual_fn, jacobian_fn
        Residual vector and its Jacobian at ``x``.
    linear_solver
        ``linear_solver(J, rhs, lin_red) -> (dx, iterations)`` returning an
        approximate solution of ``J dx = rhs`` with relative residual at most
        ``lin_red``.
    x0
        Initial guess (array or float).
    max_tol
        Override of the stop tolerance; by default it is derived from the
        initial residual.

    Returns
    -------
    x, NewtonStats
    """
    scalar = np.ndim(x0) == 0
    x = np.array(x0, dtype=float, copy=True)
    stats = NewtonStats()
    r = np.asarray(residual_fn(x), dtype=float)
    norm = _norm(r)
    stats.residual_norms.append(norm)
    tol = stop_tolerance(norm, config) if max_tol is None else max_tol
    stats.max_tol = tol
    prev = None
    while norm > tol:
        if stats.iterations >= config.m_N:
            return (float(x) if scalar else x), stats
        J = jacobian_fn(x)
        lin_red = linear_reduction(norm, prev, tol, config)
        try:
            dx, lin_its = linear_solver(J, -r, lin_red)
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise SolverError(f"linear solve failed at Newton iteration {stats.iterations}: {exc}") from exc
        dx = np.asarray(dx, dtype=float).reshape(x.shape)
        lam = 1.0
        accepted = False
        for k in range(config.m_LS):
            x_try = x + lam * dx
            r_try = np.asarray(residual_fn(x_try), dtype=float)
            n_try = float(np.linalg.norm(np.atleast_1d(r_try)))
            if np.isfinite(n_try) and n_try <= (1.0 - lam / 4.0) * norm:
                accepted = True
                break
            if k < config.m_LS - 1:
                lam *= config.d_LS
        if not accepted:
            stats.line_search_failures += 1
            if not np.isfinite(n_try):
                raise NumericError(f"non-finite residual after line search at iteration {stats.iterations}")
        stats.line_search_steps.append(k + 1)
        stats.linear_iterations.append(int(lin_its))
        prev, norm = norm, n_try
        x, r = x_try, r_try
        stats.iterations += 1
        stats.residual_norms.append(norm)
    stats.converged = True
    return (float(x) if scalar else x), stats


def scalar_linear_solver(J, rhs, lin_red):
    """Direct 'linear solve' for scalar problems."""
    return np.asarray(rhs, dtype=float) / float(np.asarray(J).reshape(())), 1
