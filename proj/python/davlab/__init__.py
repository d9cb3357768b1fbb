"""Python bindings for the davlab experiment drivers.

Configs may be given as a dict, a JSON string or a path to a JSON file.
"""

import json
import os

from . import _davlab
from ._davlab import (
    CSV_HEADER,
    CheckpointError,
    ConfigError,
    DataError,
    Error,
    NumericError,
    OracleUnavailable,
)

__all__ = [
    "CSV_HEADER", "Error", "ConfigError", "OracleUnavailable", "CheckpointError", "DataError", "NumericError",
    "load_config", "config_hash", "align", "ablate", "evaluate", "oracle", "pretrain",
]


def _text(config):
    if isinstance(config, dict):
        return json.dumps(config)
    if isinstance(config, (str, os.PathLike)) and os.path.exists(config):
        with open(config) as f:
            return f.read()
    return str(config)


def load_config(config):
    """Resolved config as a dict, with every default filled in."""
    return json.loads(_davlab.resolve_config(_text(config)))


def config_hash(config):
    return _davlab.config_hash(_text(config))


def align(config, out_dir="", resume="", stop_after=-1):
    return _davlab.align(_text(config), str(out_dir), str(resume), stop_after)


def ablate(variant, config, out_dir=""):
    return _davlab.ablate(variant, _text(config), str(out_dir))


def evaluate(checkpoint, n=256, seed=0, out_dir=""):
    return _davlab.evaluate(str(checkpoint), n, seed, str(out_dir))


def oracle(config, corrupt=False, repeats=10000):
    return _davlab.oracle(_text(config), corrupt, repeats)


def pretrain(config, out_dir):
    return _davlab.pretrain(_text(config), str(out_dir))
