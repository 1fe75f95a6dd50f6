"""Precipitation and dissolution coupled to the phase field.

The concentration ``c`` joins the Cahn-Hilliard block of the system: it uses
the same P1 space and is solved together with ``(phi, mu)`` in partitioned
steps.  Reaction source terms are assembled by
:class:`fluidsolid.assembly.StepProblem` when its ``reactive`` flag is set;
this module adds the state bookkeeping on top.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import physics as ph
from .assembly import BlockSystem, Discretization, NumericError, StepProblem, SystemState
from .driver import Stepper
from .nonlinear import NewtonConfig
from .physics import ModelParams
from .scenarios import StrategyConfig


@dataclass
class ReactiveState:
    """A system state with concentration plus the cumulative precipitated amount.

    ``reacted`` counts precipitated substance: ``c_star`` times the solid
    volume produced by the reaction (negative for net dissolution).
    """

    state: SystemState
    reacted: float = 0.0

    def __post_init__(self):
        if self.state.c is None:
            raise ValueError("a reactive state needs a concentration field")
        if not np.all(np.isfinite(self.state.c.coefficients)):
            raise NumericError("non-finite concentration")

    @property
    def time(self) -> float:
        return self.state.time


def assemble_reactive_step(disc: Discretization, old: ReactiveState, guess: ReactiveState,
                           params: ModelParams) -> tuple[np.ndarray, BlockSystem]:
    """Residual and Newton system of one reactive step at ``guess``."""
    prob = StepProblem(disc, old.state, params, guess.state.time, reactive=True)
    x = disc.pack(guess.state)
    return prob.residual(x), prob.block_system(x)


def reaction_volume_rate(disc: Discretization, phi_old: np.ndarray, c_new: np.ndarray,
                         params: ModelParams) -> float:
    """``-int R dx``: rate at which the reaction produces solid volume."""
    phi_q, _ = disc.p1_at_quad(phi_old)
    c_q, _ = disc.p1_at_quad(c_new)
    return -disc.integrate(ph.reaction_term(phi_q, c_q, params))


def step_reactive(disc: Discretization, old: ReactiveState, params: ModelParams,
                  strategy: StrategyConfig = StrategyConfig(), newton: NewtonConfig = NewtonConfig()):
    """Advance a reactive state by one step; returns ``(ReactiveState, StepStats)``."""
    if not disc.reactive:
        raise ValueError("step_reactive needs a reactive discretization")
    stepper = Stepper(disc, params, strategy, newton, reactive=True)
    t_new = old.state.time + params.tau
    new, stats = stepper.step(old.state, t_new)
    rate = reaction_volume_rate(disc, old.state.phi.coefficients, new.c.coefficients, params)
    return ReactiveState(new, old.reacted + params.c_star * params.tau * rate), stats
