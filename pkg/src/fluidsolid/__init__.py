"""Finite-element simulation of fluid-solid systems with a diffuse interface.

The phase field ``phi`` (1 in the fluid, 0 in the solid) evolves by a
Cahn-Hilliard equation coupled to Navier-Stokes flow with a drag term in the
solid.  See the README for an overview of the modules.
"""
from .assembly import BlockSystem, BoundaryConditions, Discretization, StepProblem, SystemState
from .driver import (EnergyReport, ShrinkageReport, Stepper, StepFailure, check_dissipation,
                     compute_energy, measure_solid, preprocess_initial, run_simulation,
                     step_monolithic, step_partitioned)
from .nonlinear import NewtonConfig, NewtonStats, newton_solve
from .physics import ModelParams
from .scenarios import Scenario, StrategyConfig, parse_config, realize_bcs

__version__ = "0.1.0"
