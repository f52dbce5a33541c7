"""Macro actions from demonstrations: segmentation, a ladder VAE over action
sequences and PPO agents on a continuous 2-D world."""

import json as _json

from . import _core
from ._core import (
    AgentState,
    ConfigError,
    NumericalError,
    RunConfig,
    UsageError,
    WorldConfig,
    calibrate_c,
    demo_actions,
    gen_demos,
    observe,
    reset,
    segment,
    step,
    train_favae,
    train_policy,
    traverse,
)


def evaluate(config, policy="", favae="", script=""):
    """Metrics of a policy checkpoint, or of a scripted expert, as a dict."""
    return _json.loads(_core.evaluate(config, str(policy), str(favae), script))


def check(config, corpus="", segments=""):
    return _json.loads(_core.check(config, str(corpus), str(segments)))


__all__ = [
    "AgentState",
    "ConfigError",
    "NumericalError",
    "RunConfig",
    "UsageError",
    "WorldConfig",
    "calibrate_c",
    "check",
    "demo_actions",
    "evaluate",
    "gen_demos",
    "observe",
    "reset",
    "segment",
    "step",
    "train_favae",
    "train_policy",
    "traverse",
]
