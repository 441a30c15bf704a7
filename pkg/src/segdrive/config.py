"""Run configuration: one YAML file plus ``--set key=value`` overrides."""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .augment import AugmentConfig
from .dataset import SPLITS, MaskCodec
from .errors import ConfigError
from .models import MODEL_IDS, ArchConfig
from .training import LrSchedule, TrainConfig

DATA_ROOT_ENV = "DRIVE_DATA_ROOT"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "output_dir": "runs",
    "num_threads": 1,
    "model_id": "A",
    "data": {
        "root": None,
        "splits": {},
        "class_table": None,
        "raw_mask_ids": False,
    },
    "augment": {},
    "model": {},
    "train": {
        "epochs": None,
        "batch_size": 13,
        "schedule": None,
        "augment": True,
    },
    "predict": {"split": "test"},
    "ensemble": {"members": ["B", "C"]},
    "evaluate": {"split": "test", "predictions": "ensemble"},
    "plot": {"history": None},
}


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (update or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("splits",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = yaml.safe_load(raw) if raw.strip() else None


@dataclass
class RunConfig:
    raw: dict
    seed: int
    model_id: str
    data_root: Path | None
    splits: dict[str, str]
    codec: MaskCodec
    raw_mask_ids: bool
    augment: AugmentConfig
    arch: ArchConfig
    output_dir: Path
    num_threads: int
    ensemble_members: list[str] = field(default_factory=list)

    def train_config(self, model_id: str | None = None) -> TrainConfig:
        t = self.raw["train"]
        schedule = LrSchedule.from_mapping(t["schedule"]) if t.get("schedule") else None
        return TrainConfig(model_id=model_id or self.model_id, epochs=t.get("epochs"),
                           batch_size=int(t.get("batch_size", 13)), seed=self.seed,
                           schedule=schedule, augment=bool(t.get("augment", True)))


def load_config(path: str | Path | None, overrides: list[str] | None = None,
                seed: int | None = None) -> RunConfig:
    user: dict = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base_dir = path.parent
    raw = _merge(DEFAULTS, user)
    for assignment in overrides or []:
        apply_override(raw, assignment)
    if seed is not None:
        raw["seed"] = seed
    if os.environ.get(DATA_ROOT_ENV):
        raw["data"]["root"] = os.environ[DATA_ROOT_ENV]
    return validate(raw, base_dir)


def _resolve(p: str | None, base_dir: Path) -> Path | None:
    if p is None:
        return None
    p = Path(os.path.expanduser(str(p)))
    return p if p.is_absolute() else base_dir / p


def validate(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not -(2**63) <= seed < 2**64:
        raise ConfigError(f"seed must be a 64-bit integer, got {seed!r}")
    if raw["model_id"] not in MODEL_IDS:
        raise ConfigError(f"model_id must be one of {MODEL_IDS}, got {raw['model_id']!r}")

    data = raw["data"]
    splits = {str(k): str(v) for k, v in (data.get("splits") or {}).items()}
    for chapter, split in splits.items():
        if split not in SPLITS:
            raise ConfigError(f"data.splits[{chapter!r}]={split!r} not in {SPLITS}")
    data_root = _resolve(data.get("root"), base_dir)
    if data_root is not None and not data_root.is_dir():
        raise ConfigError(f"data.root is not a directory: {data_root}")
    table = _resolve(data.get("class_table"), base_dir)
    if table is not None and not table.exists():
        raise ConfigError(f"class table not found: {table}")
    codec = MaskCodec.from_yaml(table) if table else MaskCodec.default()

    arch = ArchConfig.from_mapping(raw["model"])
    if "num_classes" not in (raw["model"] or {}):
        arch.num_classes = codec.num_channels
    elif arch.num_classes != codec.num_channels:
        raise ConfigError(f"model.num_classes={arch.num_classes} but class table has {codec.num_channels}")
    for attr in ("pretrained", "model_a_checkpoint"):
        value = _resolve(getattr(arch, attr), base_dir)
        if value is not None and not value.exists():
            raise ConfigError(f"model.{attr} not found: {value}")
        setattr(arch, attr, str(value) if value else None)

    members = list(raw["ensemble"].get("members") or [])
    bad = [m for m in members if m not in MODEL_IDS]
    if bad or not members:
        raise ConfigError(f"ensemble.members must be a non-empty subset of {MODEL_IDS}, got {members}")
    if raw["predict"].get("split") not in SPLITS or raw["evaluate"].get("split") not in SPLITS:
        raise ConfigError(f"predict/evaluate split must be one of {SPLITS}")

    cfg = RunConfig(
        raw=raw,
        seed=seed,
        model_id=raw["model_id"],
        data_root=data_root,
        splits=splits,
        codec=codec,
        raw_mask_ids=bool(data.get("raw_mask_ids", False)),
        augment=AugmentConfig.from_mapping(raw["augment"]),
        arch=arch,
        output_dir=_resolve(raw["output_dir"], base_dir),
        num_threads=int(raw["num_threads"]),
        ensemble_members=members,
    )
    cfg.train_config()  # validates the train section
    return cfg
