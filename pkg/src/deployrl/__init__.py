"""Offline RL models deployed under expert supervision.

Train a set of conservative offline models, pick one online with a UCB bandit
whose reward is the supervised deployment score, and fine-tune a model from
the expert's overrides.
"""

from .approximators import Adam, MlpActor, MlpQ, NonFiniteError, TabularQ, finite_diff_check
from .envs import FiniteMDP, PointMass, UnsupportedError, make_env, solve_optimal_q
from .finetune import OnlineFineTuner, deploy_with_overrides, finetune_discrete, run_finetuning
from .harness import ExperimentConfig, RunManifest, load_config, run_protocol
from .io import FormatError, VersionError, load_dataset, load_model, save_dataset, save_model
from .offline import (DEFAULT_LAMBDAS, ConservativeActorCritic, ConservativeQLearner, Dataset,
                      build_candidates, collect_dataset)
from .scoring import DEFAULT_SCORE_PARAMS, ScoreParams, expected_score_oracle, online_score
from .selection import UCBSelector, regret, run_selection

__version__ = "0.1.0"

__all__ = [
    "Adam", "MlpActor", "MlpQ", "NonFiniteError", "TabularQ", "finite_diff_check",
    "FiniteMDP", "PointMass", "UnsupportedError", "make_env", "solve_optimal_q",
    "OnlineFineTuner", "deploy_with_overrides", "finetune_discrete", "run_finetuning",
    "ExperimentConfig", "RunManifest", "load_config", "run_protocol",
    "FormatError", "VersionError", "load_dataset", "load_model", "save_dataset", "save_model",
    "DEFAULT_LAMBDAS", "ConservativeActorCritic", "ConservativeQLearner", "Dataset",
    "build_candidates", "collect_dataset",
    "DEFAULT_SCORE_PARAMS", "ScoreParams", "expected_score_oracle", "online_score",
    "UCBSelector", "regret", "run_selection",
]
