"""Next-best-view selection for semantic Gaussian splatting.

Configs are plain dicts with the same keys as the JSON files under configs/.
"""

import json
import os

from ._core import (
    DEFAULT_FISHER_LAMBDA,
    ContractError,
    Dataset,
    DegenerateInputError,
    DivergenceError,
    DivisionGuardError,
    NbvError,
    NumericError,
    SpecError,
    checkpoint_heatmap,
    eig,
    spearman,
    strategies,
)
from . import _core

__all__ = [
    "DEFAULT_FISHER_LAMBDA",
    "ContractError",
    "Dataset",
    "DegenerateInputError",
    "DivergenceError",
    "DivisionGuardError",
    "NbvError",
    "NumericError",
    "SpecError",
    "checkpoint_heatmap",
    "eig",
    "generate",
    "load_config",
    "run_experiment",
    "run_oracle_study",
    "run_single",
    "spearman",
    "strategies",
]


def load_config(path):
    """Read a config file, inlining "scene_path" relative to the file."""
    with open(path) as f:
        cfg = json.load(f)
    if "scene_path" in cfg:
        scene = os.path.join(os.path.dirname(os.path.abspath(path)), cfg.pop("scene_path"))
        with open(scene) as f:
            cfg["scene"] = json.load(f)
    return cfg


def _as_config(cfg):
    return load_config(cfg) if isinstance(cfg, (str, os.PathLike)) else cfg


def generate(spec):
    """Render a synthetic scene from a spec dict (or a path to one)."""
    if isinstance(spec, (str, os.PathLike)):
        with open(spec) as f:
            spec = json.load(f)
    return _core._generate(json.dumps(spec))


def run_single(config, strategy, seed=0, output_dir=""):
    return _core._run_single(json.dumps(_as_config(config)), strategy, seed, str(output_dir))


def run_experiment(config, output_dir=""):
    """Every (strategy, seed) cell of a sweep; failed cells have ok=False."""
    return _core._run_experiment(json.dumps(_as_config(config)), str(output_dir))


def run_oracle_study(config):
    return _core._run_oracle_study(json.dumps(_as_config(config)))
