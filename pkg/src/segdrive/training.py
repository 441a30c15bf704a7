"""Optimization: learning-rate schedules, summed MSE loss, per-target best
checkpoints and split evaluation."""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn

from .dataset import NormStats, denormalize_targets
from .errors import ConfigError, DataError, TrainingError

log = logging.getLogger(__name__)

DEFAULT_EPOCHS = {"A": 90, "B": 90, "C": 50}
DEFAULT_BATCH_SIZE = 13
HISTORY_COLUMNS = ("epoch", "lr", "train_loss", "val_mse_speed", "val_mse_angle")


# --------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-constant rate. ``steps`` holds ``(boundary, lr)`` pairs: with
    0-based epochs, ``lr`` applies from epoch ``boundary`` on, i.e. after
    ``boundary`` full epochs."""

    initial: float
    steps: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        bounds = [b for b, _ in self.steps]
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ConfigError(f"schedule boundaries must be strictly increasing: {bounds}")
        if self.initial <= 0 or any(lr <= 0 for _, lr in self.steps):
            raise ConfigError("learning rates must be positive")

    @classmethod
    def halving(cls, initial: float, boundaries: tuple[int, ...]) -> "LrSchedule":
        steps, lr = [], initial
        for b in boundaries:
            lr /= 2
            steps.append((b, lr))
        return cls(initial, tuple(steps))

    @classmethod
    def from_mapping(cls, data: dict) -> "LrSchedule":
        if "halve_at" in data:
            return cls.halving(float(data["initial"]), tuple(int(b) for b in data["halve_at"]))
        return cls(float(data["initial"]), tuple((int(b), float(lr)) for b, lr in data.get("steps", [])))


SCHEDULE_AB = LrSchedule(3e-4, ((5, 1e-4), (15, 5e-5), (20, 3e-5)))
SCHEDULE_C = LrSchedule.halving(3e-3, (20, 30, 40))


def default_schedule(model_id: str) -> LrSchedule:
    return SCHEDULE_C if model_id == "C" else SCHEDULE_AB


def lr_at_epoch(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    lr = schedule.initial
    for boundary, new_lr in schedule.steps:
        if epoch >= boundary:
            lr = new_lr
    return lr


@dataclass
class TrainConfig:
    model_id: str = "A"
    epochs: int | None = None
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0
    schedule: LrSchedule | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    augment: bool = True

    def __post_init__(self):
        if self.model_id not in DEFAULT_EPOCHS:
            raise ConfigError(f"unknown model id {self.model_id!r}")
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS[self.model_id]
        if self.schedule is None:
            self.schedule = default_schedule(self.model_id)
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError(f"batch_size and epochs must be >= 1 (got {self.batch_size}, {self.epochs})")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = {"initial": self.schedule.initial, "steps": [list(s) for s in self.schedule.steps]}
        return d


# --------------------------------------------------------------------------
# loss and checkpoint bookkeeping


def loss_fn(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Batch-mean squared error on speed plus the same on angle; inputs are (N, 2)."""
    sq = (pred - target) ** 2
    return sq[:, 0].mean() + sq[:, 1].mean()


@dataclass
class CheckpointMeta:
    epoch: int
    val_mse_speed: float
    val_mse_angle: float
    best_for: str


@dataclass
class Snapshot:
    meta: CheckpointMeta
    state_dict: dict = field(repr=False)


class BestTracker:
    """Keeps, independently for speed and angle, the snapshot with the lowest
    validation MSE seen so far (earliest epoch wins ties)."""

    TARGETS = ("speed", "angle")

    def __init__(self):
        self.best: dict[str, Snapshot | None] = {t: None for t in self.TARGETS}

    def update(self, epoch: int, mse_speed: float, mse_angle: float,
               state_fn: Callable[[], dict]) -> list[str]:
        improved = []
        for target, value in zip(self.TARGETS, (mse_speed, mse_angle)):
            cur = self.best[target]
            cur_value = None if cur is None else getattr(cur.meta, f"val_mse_{target}")
            if cur is None or value < cur_value:
                meta = CheckpointMeta(epoch, mse_speed, mse_angle, target)
                self.best[target] = Snapshot(meta, state_fn())
                improved.append(target)
        return improved


@dataclass
class TrainResult:
    best_speed: Snapshot
    best_angle: Snapshot
    history: list[dict]


def make_batches(n: int, batch_size: int, rng: np.random.Generator, shuffle: bool = True) -> list[np.ndarray]:
    """Index batches; a trailing batch of one joins the previous batch since
    batch normalization cannot train on a single sample."""
    order = rng.permutation(n) if shuffle else np.arange(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def _collate(dataset, idx: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
    items = [dataset[int(i)] for i in idx]
    return torch.stack([it[0] for it in items]), torch.stack([it[1] for it in items])


def _model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


# --------------------------------------------------------------------------
# evaluation


@torch.no_grad()
def predict_normalized(model: nn.Module, dataset, batch_size: int = DEFAULT_BATCH_SIZE) -> np.ndarray:
    """(N, 2) normalized predictions in dataset order, inference mode."""
    if getattr(dataset, "augment", None) is not None:
        raise DataError("prediction requires a dataset without augmentation")
    was_training = model.training
    model.eval()
    dtype = _model_dtype(model)
    out = []
    for idx in make_batches(len(dataset), batch_size, np.random.default_rng(0), shuffle=False):
        x, _ = _collate(dataset, idx)
        out.append(model(x.to(dtype)).double().numpy())
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, 2))


def mse_per_target(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    sq = (np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)) ** 2
    return float(sq[:, 0].mean()), float(sq[:, 1].mean())


def evaluate_split(model: nn.Module, dataset, stats: NormStats,
                   batch_size: int = DEFAULT_BATCH_SIZE) -> tuple[float, float]:
    """(mse_speed, mse_angle) in dataset-native units."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate an empty split")
    pred = denormalize_targets(predict_normalized(model, dataset, batch_size), stats)
    return mse_per_target(pred, dataset.raw_targets)


# --------------------------------------------------------------------------
# training loop


def train(model: nn.Module, train_set, val_set, cfg: TrainConfig, stats: NormStats,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam with ``cfg.schedule``; after every epoch the validation split is
    scored and the speed/angle best snapshots are updated independently."""
    if len(train_set) == 0:
        raise DataError("training split is empty")
    if len(val_set) == 0:
        raise DataError("validation split is empty")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=cfg.schedule.initial, betas=cfg.betas)
    tracker = BestTracker()
    history = []
    dtype = _model_dtype(model)

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg.schedule, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        if hasattr(train_set, "set_epoch"):
            train_set.set_epoch(epoch)

        model.train()
        total, seen = 0.0, 0
        for b, idx in enumerate(make_batches(len(train_set), cfg.batch_size, rng)):
            x, y = _collate(train_set, idx)
            loss = loss_fn(model(x.to(dtype)), y.to(dtype))
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, batch {b}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(idx)
            seen += len(idx)

        mse_s, mse_a = evaluate_split(model, val_set, stats, cfg.batch_size)
        improved = tracker.update(epoch, mse_s, mse_a, lambda: copy.deepcopy(model.state_dict()))
        row = {"epoch": epoch, "lr": lr, "train_loss": total / seen,
               "val_mse_speed": mse_s, "val_mse_angle": mse_a}
        history.append(row)
        log.info("epoch %d lr %.6g train_loss %.6f val_mse_speed %.6f val_mse_angle %.6f%s",
                 epoch, lr, row["train_loss"], mse_s, mse_a,
                 f" (best {', '.join(improved)})" if improved else "")
        if on_epoch:
            on_epoch(row)

    return TrainResult(tracker.best["speed"], tracker.best["angle"], history)


def write_history(history: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_COLUMNS})


def read_history(path: str | Path) -> list[dict]:
    """Parse a history CSV; malformed rows raise DataError naming the row number."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(HISTORY_COLUMNS) - set(reader.fieldnames):
            raise DataError(f"{path}: header must contain {','.join(HISTORY_COLUMNS)}")
        for rowno, raw in enumerate(reader, start=2):
            try:
                row = {k: float(raw[k]) for k in HISTORY_COLUMNS}
                row["epoch"] = int(raw["epoch"])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}: malformed row {rowno}: {exc}") from exc
            if not all(math.isfinite(row[k]) for k in HISTORY_COLUMNS[1:]):
                raise DataError(f"{path}: malformed row {rowno}: non-finite value")
            rows.append(row)
    return rows
