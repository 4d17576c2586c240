"""JSON run configuration shared by the CLI subcommands.

A config file looks like::

    {
      "schema_version": 1,
      "gen_data":    {"meshes": [...], "views": 8, "resolution": 64, ...},
      "split":       {"fractions": [0.827, 0.091, 0.082], "seed": 0},
      "train":       {"max_steps": 500, "net": {...}, "loss_weights": {...}, ...},
      "sketchify":   {"method": "canny", "params": {"low": 0.1}},
      "reconstruct": {"mask_threshold": 0.5, "azimuth_deg": 0.0, ...}
    }

Every section is optional. Keys inside ``gen_data`` and ``train`` are the
fields of :class:`~sketch2statue.dataset.GenDataConfig` and
:class:`~sketch2statue.train.TrainConfig`; command-line flags override them.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .dataset import GenDataConfig
from .errors import InvalidInputError
from .net import LossWeights, NetConfig
from .train import TrainConfig

SCHEMA_VERSION = 1

_SECTIONS = {
    "gen_data": {f.name for f in dataclasses.fields(GenDataConfig)} | {"out", "workers"},
    "split": {"fractions", "seed"},
    "train": {f.name for f in dataclasses.fields(TrainConfig)} | {"profile"},
    "sketchify": {"method", "params", "external_command"},
    "reconstruct": {"mask_threshold", "azimuth_deg", "elevation_deg", "half_extent"},
}
_NESTED = {"net": {f.name for f in dataclasses.fields(NetConfig)},
           "loss_weights": {f.name for f in dataclasses.fields(LossWeights)}}


def _check_keys(where: str, got: dict, allowed: set) -> None:
    if not isinstance(got, dict):
        raise InvalidInputError(f"config {where} must be an object")
    extra = sorted(set(got) - allowed)
    if extra:
        raise InvalidInputError(f"unknown config keys in {where}: {', '.join(extra)}")


def validate_config(doc: dict) -> dict:
    _check_keys("top level", doc, set(_SECTIONS) | {"schema_version"})
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InvalidInputError(f"config schema_version must be {SCHEMA_VERSION}, "
                                f"got {doc.get('schema_version')!r}")
    for name, allowed in _SECTIONS.items():
        section = doc.get(name, {})
        _check_keys(name, section, allowed)
        if name == "train":
            for sub, sub_allowed in _NESTED.items():
                _check_keys(f"train.{sub}", section.get(sub, {}), sub_allowed)
    return doc


def load_config(path) -> dict:
    """Parse and validate a config file; ``None`` gives an empty config."""
    if path is None:
        return {"schema_version": SCHEMA_VERSION}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InvalidInputError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config {path} is not valid JSON: {exc}") from exc
    return validate_config(doc)


def section(doc: dict, name: str) -> dict:
    return dict(doc.get(name, {}))
