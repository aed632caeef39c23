"""Run configuration: a strict JSON document with typo-safe key checking."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict, fields


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dim: int = 32
    embed_dim: int = 32
    fc_dim: int = 32
    outer_iters: int = 3
    inner_steps: int = 2
    variant: str = "full"            # full | const_graph | no_iter
    batch_size: int = 32
    lr_base: float = 1e-3
    lr_floor: float = 5e-5
    epochs: int = 5
    seed: int = 0
    k_options: int = 20
    mode: str = "visdial"            # visdial | visdialq

    def __post_init__(self):
        if self.mode not in ("visdial", "visdialq"):
            raise ConfigError(f"mode must be visdial or visdialq, got {self.mode!r}")
        if self.variant not in ("full", "const_graph", "no_iter"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.outer_iters < 0 or self.inner_steps < 0:
            raise ConfigError("outer_iters and inner_steps must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


REQUIRED_KEYS = ("dim", "fc_dim", "outer_iters", "inner_steps", "variant",
                 "batch_size", "lr_base", "lr_floor", "epochs", "seed",
                 "k_options", "mode")
_ALL_KEYS = {f.name for f in fields(RunConfig)}


def parse_config(doc: dict) -> RunConfig:
    for key in doc:
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown config key: {key}")
    for key in REQUIRED_KEYS:
        if key not in doc:
            raise ConfigError(f"missing config key: {key}")
    cfg = RunConfig(**doc)
    env_seed = os.environ.get("EMGNN_SEED")
    if env_seed is not None:
        cfg.seed = int(env_seed)
    return cfg


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(doc)
