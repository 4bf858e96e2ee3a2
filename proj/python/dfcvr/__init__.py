"""Decision-focused volt-var control.

Thin wrappers over the C++ core. Configurations, models, day results and
reports are plain dicts with the same layout as the JSON files the
command-line tool writes.
"""

import json
import os

from . import _core
from ._core import ConfigError, DataError, SolverError, zip_eval

__all__ = [
    "ConfigError",
    "DataError",
    "SolverError",
    "zip_eval",
    "resolved_config",
    "synth",
    "dataset_summary",
    "train_mse",
    "train_bilevel",
    "run_day",
    "evaluate",
    "validate_report",
]


def _cfg(config):
    """(json text, base dir) from a path, a dict or None."""
    if config is None:
        return "", "."
    if isinstance(config, (str, os.PathLike)):
        path = os.fspath(config)
        with open(path) as f:
            return f.read(), os.path.dirname(os.path.abspath(path))
    return json.dumps(config), "."


def resolved_config(config=None):
    return json.loads(_core.resolved_config(*_cfg(config)))


def synth(out_csv, config=None):
    _core.synth(*_cfg(config), os.fspath(out_csv))


def dataset_summary(csv):
    return json.loads(_core.dataset_summary(os.fspath(csv)))


def train_mse(csv, config=None):
    return json.loads(_core.train_mse(*_cfg(config), os.fspath(csv)))


def train_bilevel(csv, warm_model, config=None):
    return json.loads(_core.train_bilevel(*_cfg(config), os.fspath(csv), json.dumps(warm_model)))


def run_day(csv, mode, day, model=None, config=None):
    text = json.dumps(model) if model is not None else ""
    return json.loads(_core.run_day(*_cfg(config), os.fspath(csv), mode, day, text))


def evaluate(csv, proposed, base, config=None):
    return json.loads(
        _core.evaluate(*_cfg(config), os.fspath(csv), json.dumps(proposed), json.dumps(base))
    )


def validate_report(report):
    _core.validate_report(json.dumps(report))
