"""Python front-end for the fedreg federated learning simulator."""

import json as _json
import os as _os

from ._core import (
    ConfigError,
    FormatError,
    InputError,
    Model,
    NumericError,
    aggregate,
    compose_local_loss,
    cosine_sim,
    dirichlet_partition,
    layer_loss,
    layer_weights,
    median_last_k,
    sample_clients,
    synth_dataset,
)
from . import _core

__all__ = [
    "ConfigError",
    "FormatError",
    "InputError",
    "Model",
    "NumericError",
    "aggregate",
    "compose_local_loss",
    "cosine_sim",
    "dirichlet_partition",
    "layer_loss",
    "layer_weights",
    "median_last_k",
    "partition_stats",
    "resolve_config",
    "run",
    "sample_clients",
    "synth_dataset",
]


def _as_json(config):
    if isinstance(config, (str, bytes, _os.PathLike)) and _os.path.isfile(config):
        with open(config, encoding="utf-8") as f:
            return f.read(), _os.path.dirname(_os.path.abspath(config))
    if isinstance(config, dict):
        return _json.dumps(config), ""
    return str(config), ""


def run(config):
    """Train every sweep point of `config` (dict, JSON text or path) and return per-point results."""
    text, base = _as_json(config)
    results = _core.run(text, base)
    for r in results:
        r["report"] = _json.loads(r.pop("report_json"))
    return results


def resolve_config(config):
    """Fully defaulted configuration as a dict."""
    return _json.loads(_core.resolve_config(_as_json(config)[0]))


def partition_stats(config):
    """Rows of (client, class, count) for the training partition of `config`."""
    lines = _core.partition_stats(_as_json(config)[0]).strip().splitlines()[1:]
    return [tuple(int(v) for v in line.split(",")) for line in lines]
