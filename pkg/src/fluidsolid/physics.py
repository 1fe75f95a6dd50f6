"""Pointwise model closures.

Everything here is a vectorised function of numpy arrays (or floats) and a
:class:`ModelParams` instance.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

SQRT2 = np.sqrt(2.0)


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    rho: float = 1.0
    gamma: float = 0.01
    d0: float = 1000.0
    d_max: float = 0.9
    M: float = 1.0
    sigma: float = 1.0
    epsilon: float = 0.03
    delta: float = 0.03
    delta_dw: float = 0.02
    gamma_dw: float = 0.015
    M_pre: float = 1000.0
    n_pre: int = 0
    D: float = 1.0
    c_star: float = 2.0
    k_c: float = 0.1
    f_bar: float = 0.1
    tau: float = 0.02

    def validate(self) -> "ModelParams":
        """Raise :class:`ParameterError` naming the first violated invariant."""
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "n_pre":
                if int(v) != v or v < 0:
                    raise ParameterError("n_pre must be a non-negative integer")
            elif f.name == "k_c":
                if not v >= 0:
                    raise ParameterError("k_c must be non-negative")
            elif not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{f.name} must be strictly positive (got {v})")
        if self.delta_dw > self.delta:
            raise ParameterError("delta_dw must not exceed delta")
        if not self.delta_dw - self.gamma_dw > 0:
            raise ParameterError("delta_dw - gamma_dw must be positive")
        if self.d_max > 1:
            raise ParameterError("d_max must lie in (0, 1]")
        return self

    def as_dict(self) -> dict:
        return asdict(self)


# -- regularised fractions ----------------------------------------------------
def fluid_fraction(phi, params: ModelParams):
    """``2 delta + (1 - 2 delta) phi``."""
    return 2 * params.delta + (1 - 2 * params.delta) * phi


def densities(phi, params: ModelParams):
    """Return ``(rho_f, rho_f_tilde) = (rho phi, rho phi + rho delta)``."""
    rho_f = params.rho * phi
    return rho_f, rho_f + params.rho * params.delta


# -- double-well potential ----------------------------------------------------
def _limiter_parts(phi, params: ModelParams):
    d, g = params.delta_dw, params.gamma_dw
    phi = np.asarray(phi, dtype=float)
    low = phi <= -g
    mid = (phi > -g) & (phi < 0)
    slope = -g * (2 * d - g) / (d - g) ** 2
    # clip so that the rational branch is never evaluated at its pole
    pm = np.where(mid, phi, -0.5 * g)
    val = np.where(low, d * (g * g / (d - g) + (phi + g) * slope), 0.0)
    val = np.where(mid, d * pm * pm / (pm + d), val)
    der = np.where(low, d * slope, 0.0)
    der = np.where(mid, d * pm * (pm + 2 * d) / (pm + d) ** 2, der)
    sec = np.where(mid, 2 * d ** 3 / (pm + d) ** 3, 0.0)
    return val, der, sec


def limiter(phi, params: ModelParams):
    return _limiter_parts(phi, params)[0]


def limiter_prime(phi, params: ModelParams):
    return _limiter_parts(phi, params)[1]


def limiter_second(phi, params: ModelParams):
    return _limiter_parts(phi, params)[2]


def double_well(phi, params: ModelParams):
    phi = np.asarray(phi, dtype=float)
    return phi ** 2 * (1 - phi) ** 2 + limiter(phi, params) + limiter(1 - phi, params)


def double_well_prime(phi, params: ModelParams):
    phi = np.asarray(phi, dtype=float)
    return 2 * phi * (1 - phi) * (1 - 2 * phi) + limiter_prime(phi, params) - limiter_prime(1 - phi, params)


# Convex-concave split with W_c + W_e = W_dw:
#   W_c = (phi - 1/2)^4 + 1/16 + l(phi) + l(1 - phi)
#   W_e = -(phi - 1/2)^2 / 2
def convex_part(phi, params: ModelParams):
    s = np.asarray(phi, dtype=float) - 0.5
    return s ** 4 + 1 / 16 + limiter(phi, params) + limiter(1 - np.asarray(phi), params)


def concave_part(phi, params: ModelParams):
    s = np.asarray(phi, dtype=float) - 0.5
    return -0.5 * s * s


def convex_prime(phi, params: ModelParams):
    phi = np.asarray(phi, dtype=float)
    s = phi - 0.5
    return 4 * s ** 3 + limiter_prime(phi, params) - limiter_prime(1 - phi, params)


def convex_second(phi, params: ModelParams):
    phi = np.asarray(phi, dtype=float)
    s = phi - 0.5
    return 12 * s * s + limiter_second(phi, params) + limiter_second(1 - phi, params)


def concave_prime(phi, params: ModelParams):
    return -(np.asarray(phi, dtype=float) - 0.5)


def concave_second(phi, params: ModelParams):
    return -np.ones_like(np.asarray(phi, dtype=float))


def double_well_split_prime(phi_new, phi_old, params: ModelParams):
    """``W_c'(phi_new) + W_e'(phi_old)``: implicit convex, explicit concave part."""
    return convex_prime(phi_new, params) + concave_prime(phi_old, params)


# -- momentum dissipation -----------------------------------------------------
def drag(phi_f_tilde, params: ModelParams):
    """Modified drag ``d0 (d_max - x)^2 / d_max^2`` below the cut-off, zero above."""
    x = np.asarray(phi_f_tilde, dtype=float)
    dm = params.d_max
    return np.where(x <= dm, params.d0 * (dm - x) ** 2 / dm ** 2, 0.0)


def ch_flux_coeff(params: ModelParams, preprocessing: bool = False) -> float:
    """Scalar multiplying ``-grad mu`` in the Cahn-Hilliard flux ``J``."""
    return (params.M_pre if preprocessing else params.M) * params.epsilon


# -- precipitation / dissolution ----------------------------------------------
def reaction_rate(c, params: ModelParams):
    """``k_c (c^2 - 1)``; equilibrium concentration 1."""
    c = np.asarray(c, dtype=float)
    return params.k_c * (c * c - 1.0)


def reaction_rate_prime(c, params: ModelParams):
    return 2.0 * params.k_c * np.asarray(c, dtype=float)


def reaction_localization(phi):
    """``max(sqrt(2) phi (1 - phi), 0)``."""
    phi = np.asarray(phi, dtype=float)
    return np.maximum(SQRT2 * phi * (1 - phi), 0.0)


def reaction_term(phi_old, c_new, params: ModelParams):
    """Semi-implicit source ``R = -q(phi_old) / eps * r(c_new)``."""
    return -reaction_localization(phi_old) / params.epsilon * reaction_rate(c_new, params)


# -- initial data -------------------------------------------------------------
def tanh_circle_ic(circles, params: ModelParams):
    """Product of radially symmetric equilibrium profiles.

    ``circles`` is a sequence of ``((xc, yc), r)``.  Returns ``f(x, y)``.
    """
    circles = [((float(c[0][0]), float(c[0][1])), float(c[1])) for c in circles]
    for _, r in circles:
        if r <= 0:
            raise ParameterError("circle radius must be positive")
    scale = SQRT2 * params.epsilon

    def phi0(x, y):
        out = np.ones(np.broadcast(x, y).shape)
        for (xc, yc), r in circles:
            dist = np.hypot(x - xc, y - yc)
            out = out * 0.5 * (1.0 + np.tanh((dist - r) / scale))
        return out

    return phi0
