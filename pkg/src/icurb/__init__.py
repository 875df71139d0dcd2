"""Curb graph extraction by imitation learning, on deterministic synthetic scenes."""

from .candidates import CandidateConfig, initial_candidates
from .env import CurbGraph, EnvConfig, Mode, run_image
from .metrics import MetricReport, evaluate
from .policy import MlpPolicy, make_expert_policy
from .synth import GroundTruth, SceneBundle, SynthConfig, make_scene
from .trainer import TrainConfig, train_run

__version__ = "0.1.0"

__all__ = [
    "CandidateConfig",
    "CurbGraph",
    "EnvConfig",
    "GroundTruth",
    "MetricReport",
    "MlpPolicy",
    "Mode",
    "SceneBundle",
    "SynthConfig",
    "TrainConfig",
    "evaluate",
    "initial_candidates",
    "make_expert_policy",
    "make_scene",
    "run_image",
    "train_run",
]
