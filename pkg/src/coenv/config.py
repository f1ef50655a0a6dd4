"""Tolerance and budget configuration, optionally overridden from a JSON file.

Example file::

    {"interactive": {"pos_check_tol": 0.015, "max_replans": 1},
     "iterative": {"M_max": 5},
     "transfer": {"steps": 40, "margin": 0.02},
     "world": {"grasp_capture_tol": 0.02, "ik": {"pos_tol": 1e-5}}}
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import InvalidArgument
from .interactive import InteractiveConfig
from .iterative import IterativeConfig
from .kinematics import IkConfig
from .transfer import DEFAULT_MARGIN, DEFAULT_STEPS
from .world import WorldConfig


@dataclass(frozen=True)
class TransferConfig:
    steps: int = DEFAULT_STEPS
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")


@dataclass(frozen=True)
class Config:
    interactive: InteractiveConfig = field(default_factory=InteractiveConfig)
    iterative: IterativeConfig = field(default_factory=IterativeConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)


def _override(obj, values: Mapping, where: str):
    if not isinstance(values, Mapping):
        raise InvalidArgument(f"{where} must be an object")
    names = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, v in values.items():
        if key not in names:
            raise InvalidArgument(f"unknown setting {where}.{key}")
        cur = getattr(obj, key)
        if dataclasses.is_dataclass(cur):
            changes[key] = _override(cur, v, f"{where}.{key}")
        elif isinstance(cur, bool):
            if not isinstance(v, bool):
                raise InvalidArgument(f"{where}.{key} must be true or false")
            changes[key] = v
        elif isinstance(cur, int):
            if isinstance(v, bool) or not isinstance(v, int):
                raise InvalidArgument(f"{where}.{key} must be an integer")
            changes[key] = v
        else:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InvalidArgument(f"{where}.{key} must be a number")
            changes[key] = float(v)
    try:
        return dataclasses.replace(obj, **changes)
    except ValueError as exc:
        raise InvalidArgument(f"{where}: {exc}") from None


def config_from_dict(d: Mapping) -> Config:
    return _override(Config(), d, "config")


def load_config(path) -> Config:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InvalidArgument(f"config file {path} not found") from None
    except ValueError as exc:
        raise InvalidArgument(f"config file {path}: {exc}") from None
    return config_from_dict(d)


def config_to_dict(cfg: Config) -> dict:
    return dataclasses.asdict(cfg)


__all__ = ["Config", "IkConfig", "TransferConfig", "config_from_dict", "config_to_dict", "load_config"]
