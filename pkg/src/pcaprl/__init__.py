"""Power-cap control toolkit for compute nodes.

Identify a PCAP-to-progress node model from step-response data, train a PPO
agent against the model, and evaluate it next to PI and constant-cap
baselines on a simulated node, including Pareto and repeatability
experiments and a socket-based control daemon.
"""

from .model import ModelParams
from .simenv import EnvConfig, RewardWeights, SimEnv, run_episode
from .ppo import PpoConfig, train, save_policy, load_policy
from .controllers import ControllerSpec, build_controller

__all__ = [
    "ModelParams", "EnvConfig", "RewardWeights", "SimEnv", "run_episode",
    "PpoConfig", "train", "save_policy", "load_policy",
    "ControllerSpec", "build_controller",
]

__version__ = "0.1.0"
