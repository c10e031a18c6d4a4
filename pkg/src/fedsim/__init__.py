"""Federated learning simulator with pluggable attacks and defenses."""

from .attacks import AttackSpec, Attacker
from .config import ExperimentConfig, config_from_dict, load_config
from .data import Dataset, make_synthetic, partition_dirichlet
from .defenses import DefenseSpec, Defender, DefenderState
from .engine import Client, HookRegistry, OptimizerSpec, ServerOptimizer, run_round, select_clients
from .model import ModelSpec, TrainConfig, evaluate, init_params, local_train
from .params import ParamVector
from .presets import preset, preset_names
from .runner import run_experiment
from .updates import ClientUpdate, RoundState

__version__ = "0.1.0"
