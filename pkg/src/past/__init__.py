"""Privacy-sensitivity-weighted sparse tuning and a membership-inference test bench."""

from .nn import ModelSpec, OptimConfig, ParameterStore, init_model
from .tuning import PastConfig, past_tune, privacy_sensitivity, uniform_reg_tune, lossgap_reg_tune
from .attacks import run_attack_battery
from .config import ExperimentConfig, load_config

__all__ = [
    "ModelSpec", "OptimConfig", "ParameterStore", "init_model",
    "PastConfig", "past_tune", "privacy_sensitivity", "uniform_reg_tune", "lossgap_reg_tune",
    "run_attack_battery", "ExperimentConfig", "load_config",
]
