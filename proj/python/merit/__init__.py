"""MERIT merchant-incentive ranking toolkit."""

import json

from ._core import (
    Dataset,
    MeritError,
    Model,
    auc,
    gauc,
    load_checkpoint,
    load_dataset,
    ndcg_at_k,
    preset_names,
    wndcg_at_k,
)
from . import _core

__all__ = [
    "Dataset",
    "MeritError",
    "Model",
    "auc",
    "evaluate",
    "gauc",
    "generate",
    "load_checkpoint",
    "load_dataset",
    "ndcg_at_k",
    "preset_names",
    "train",
    "verify",
    "wndcg_at_k",
]


def generate(config=None, seed=None):
    """Simulate a world and return (train, test) datasets.

    `config` holds WorldConfig fields; omitted fields keep their defaults.
    """
    config = dict(config or {})
    if seed is not None:
        config["seed"] = seed
    return _core._generate(json.dumps(config))


def train(config, train_set, monitor=None):
    """Train from a config dict (TrainConfig keys, optionally "preset").

    Returns (model, history) where history is a list of per-epoch dicts.
    """
    return _core._train(json.dumps(config), train_set, monitor)


def evaluate(model, test_set, threads=1):
    """Full metrics report as a dict; undefined values are None."""
    return json.loads(_core._evaluate(model, test_set, threads))


def verify(which="all", seed=1):
    """Run a group of self-checks: all, gradients, metrics or contracts."""
    return json.loads(_core._verify(which, seed))
