"""Configuration dataclasses and JSON round-trip.

A config file is a JSON object with optional "model" and "train"
sections; omitted fields keep their defaults. Configs are echoed into
checkpoint and experiment manifests so artifacts are self-describing.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ContractViolation

__all__ = ["ModelConfig", "TrainConfig", "load_config_file", "config_to_dict"]


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 32
    n_heads: int = 4
    variant: str = "gaussian"   # reconstruction strategy
    sigma: float = 3.0          # reference point spread, grid cells

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return _from_dict(cls, d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lr: float = 4.2e-4
    lr_schedule: str = "constant"  # constant | cosine (decay to 0)
    weight_decay: float = 0.01
    lambda_rec: float = 0.05    # weight of the reconstruction term
    lambda_cor: float = 5.0     # weight of the correction term
    correction: str = "l2"      # l2 | l1 | kl | none
    detach_teacher: bool = True
    mask_count: int = 1
    mask_mode: str = "fixed"    # fixed | uniform (1..5 views per sample)
    seed: int = 0
    force_all_terms: bool = False
    checkpoint_every: int = 0   # extra epoch cadence; final always saved

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _from_dict(cls, d)


def _from_dict(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ContractViolation(
            f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**d)


def config_to_dict(model_cfg: ModelConfig, train_cfg: TrainConfig) -> dict:
    return {"model": asdict(model_cfg), "train": asdict(train_cfg)}


def load_config_file(path) -> tuple[ModelConfig, TrainConfig]:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ContractViolation(f"cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ContractViolation("config file must hold a JSON object")
    model_cfg = ModelConfig.from_dict(raw.get("model", {}))
    train_cfg = TrainConfig.from_dict(raw.get("train", {}))
    return model_cfg, train_cfg
