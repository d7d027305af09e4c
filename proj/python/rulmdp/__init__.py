"""Python access to the rulmdp core: MDP solving, agents and the full pipeline."""

import json

from . import _core
from ._core import DataError, ValidationError, piecewise_rul, rule_recommend

ACTION_NAMES = list(_core.ACTION_NAMES)

__all__ = [
    "ACTION_NAMES",
    "DataError",
    "ValidationError",
    "bellman_residual",
    "episode_return",
    "load_mdp",
    "piecewise_rul",
    "rule_recommend",
    "run_config_defaults",
    "run_pipeline",
    "solve",
    "toy_mdp",
    "train_agent",
]


def toy_mdp():
    return json.loads(_core.toy_mdp_json())


def load_mdp(path):
    return json.loads(_core.load_mdp_json(str(path)))


def solve(spec, tol=1e-10):
    """Value iteration. Returns values, policy (indices), policy_names, iterations."""
    return _core.value_iteration(json.dumps(spec), tol)


def bellman_residual(spec, values):
    return _core.bellman_residual(json.dumps(spec), list(values))


def episode_return(spec, policy):
    return _core.episode_return(json.dumps(spec), list(policy))


def train_agent(spec, kind="dqn", steps=50_000, seed=42):
    """Train one agent; returns per-episode returns and the greedy policy."""
    return _core.train_agent(json.dumps(spec), kind, steps, seed)


def run_config_defaults():
    return json.loads(_core.run_config_defaults_json())


def run_pipeline(config):
    cfg = dict(config)
    cfg.setdefault("kind", "pipeline")
    return json.loads(_core.run_pipeline_json(json.dumps(cfg)))
