"""Extra-gradient with player sampling for convex n-player games."""
__version__ = "0.1.0"

from .games import (PlayerLayout, GameSynthesisParams, QuadraticGame, synthesize_game,
                    synthesize_payoff, rock_paper_scissors, bilinear_game)
from .geometry import Geometry, prox_map, project_simplex
from .sampling import PlayerMask, Sampler, VrTable, masked_estimate, vr_estimate
from .solvers import Schedule, SolverConfig, run, run_many, schedule_value, step, init_state
from .metrics import Trace, nash_error, slope, aggregate
from .spectral import build_operator, spectral_radius, min_radius_over_grid, radius_study
from .bench import ExperimentConfig, SolverSpec, GridSpec, run_bench, write_bench

__all__ = [
    "PlayerLayout", "GameSynthesisParams", "QuadraticGame", "synthesize_game", "synthesize_payoff",
    "rock_paper_scissors", "bilinear_game", "Geometry", "prox_map", "project_simplex",
    "PlayerMask", "Sampler", "VrTable", "masked_estimate", "vr_estimate", "Schedule",
    "SolverConfig", "run", "run_many", "schedule_value", "step", "init_state", "Trace",
    "nash_error", "slope", "aggregate", "build_operator", "spectral_radius",
    "min_radius_over_grid", "radius_study", "ExperimentConfig", "SolverSpec", "GridSpec",
    "run_bench", "write_bench",
]
