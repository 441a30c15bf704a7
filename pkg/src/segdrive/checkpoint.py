"""Self-describing checkpoint files."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch
import torch.nn as nn

from .dataset import NormStats
from .errors import DataError

FORMAT_VERSION = 1
REQUIRED_KEYS = ("format", "model_id", "arch", "config_hash", "state_dict", "norm_stats",
                 "epoch", "val_mse_speed", "val_mse_angle", "best_for")


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def checkpoint_name(model_id: str, target: str, epoch: int) -> str:
    return f"model_{model_id}_{target}_epoch{epoch:03d}.pt"


def save_checkpoint(path: str | Path, *, model_id: str, arch: dict, state_dict: dict,
                    stats: NormStats, epoch: int, val_mse_speed: float, val_mse_angle: float,
                    best_for: str, train_config: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": FORMAT_VERSION,
        "model_id": model_id,
        "arch": arch,
        "train_config": train_config or {},
        "config_hash": config_hash({"arch": arch, "train": train_config or {}}),
        "state_dict": {k: v.detach().cpu() for k, v in state_dict.items()},
        "norm_stats": stats.to_dict(),
        "epoch": int(epoch),
        "val_mse_speed": float(val_mse_speed),
        "val_mse_angle": float(val_mse_angle),
        "best_for": best_for,
    }, path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    missing = [k for k in REQUIRED_KEYS if k not in ckpt]
    if missing:
        raise DataError(f"{path}: not a checkpoint (missing {missing})")
    return ckpt


def restore_model(path: str | Path) -> tuple[nn.Module, NormStats, dict]:
    """Rebuild the architecture recorded in a checkpoint and load its weights."""
    from .models import ArchConfig, build_model

    ckpt = load_checkpoint(path)
    arch = ArchConfig.from_mapping(ckpt["arch"])
    # weights come from the checkpoint itself
    arch.pretrained = None
    arch.extractor_weights = {}
    arch.model_a_checkpoint = None
    model = build_model(ckpt["model_id"], arch)
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model, NormStats.from_dict(ckpt["norm_stats"]), ckpt


def find_checkpoint(directory: str | Path, model_id: str, target: str) -> Path:
    found = sorted(Path(directory).glob(f"model_{model_id}_{target}_epoch*.pt"))
    if not found:
        raise FileNotFoundError(f"no {target} checkpoint for model {model_id} in {directory}")
    return found[-1]
