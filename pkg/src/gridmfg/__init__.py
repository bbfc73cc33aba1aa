"""Storage control on a power grid as a linear-quadratic mean-field game / control problem."""

from .config import GameMode, ScenarioConfig, load_scenario, parse_scenario, validate
from .engine import baseline_no_storage, simulate_mean_field, simulate_n_player
from .solver import build_policy, solve

__all__ = [
    "GameMode",
    "ScenarioConfig",
    "baseline_no_storage",
    "build_policy",
    "load_scenario",
    "parse_scenario",
    "simulate_mean_field",
    "simulate_n_player",
    "solve",
    "validate",
]
__version__ = "0.1.0"
