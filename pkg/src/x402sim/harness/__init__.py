"""Attack drivers and theorem validation wired over the protocol parties."""

from .config import ConfigError, ExperimentConfig, load_config
from .env import World, build_world, make_payment, run_to_completion
from .attack1 import run_attack_1a, run_attack_1b
from .attack2 import run_attack_2
from .attack3 import run_attack_3
from .attack4 import run_attack_4
from .theorems import validate_theorems

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "World",
    "build_world",
    "make_payment",
    "run_to_completion",
    "run_attack_1a",
    "run_attack_1b",
    "run_attack_2",
    "run_attack_3",
    "run_attack_4",
    "validate_theorems",
]
