"""Decomposed multi-agent policy gradients with off-policy tree backup,
joint-critic baselines, desk-scale cooperative tasks, and exact oracles."""

from ._backend import HAS_EXT
from .critic import CriticEval, DecomposedCritic, fit_least_squares_tabular
from .envs import (Aggregation, Box, Discrete, EnvSpec, Episode, MatrixGame,
                   Mill, StepResult, TabularDecMDP, enumerate_joint_actions,
                   make_env, random_tabular)
from .nets import Grad, Mlp, RmsProp, grad_check, softmax

__version__ = "0.1.0"

__all__ = [
    "HAS_EXT", "CriticEval", "DecomposedCritic", "fit_least_squares_tabular",
    "Aggregation", "Box", "Discrete", "EnvSpec", "Episode", "MatrixGame",
    "Mill", "StepResult", "TabularDecMDP", "enumerate_joint_actions",
    "make_env", "random_tabular", "Grad", "Mlp", "RmsProp", "grad_check",
    "softmax", "__version__",
]
