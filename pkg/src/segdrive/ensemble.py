"""Prediction sets: uniform averaging across models, MSE scoring and the
submission CSV format."""
from __future__ import annotations

import csv
import logging
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Manifest
from .errors import DataError

log = logging.getLogger(__name__)

SUBMISSION_HEADER = ("chapter", "frame", "speed", "angle")


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: tuple[str, int]
    speed: float
    angle: float


@dataclass
class PredictionSet:
    model_tag: str
    records: list[PredictionRecord] = field(default_factory=list)

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.sample_id)
        ids = [r.sample_id for r in self.records]
        dupes = {i for i, j in zip(ids, ids[1:]) if i == j}
        if dupes:
            raise DataError(f"{self.model_tag}: duplicate sample ids {sorted(dupes)[:5]}")
        bad = [r.sample_id for r in self.records if not (math.isfinite(r.speed) and math.isfinite(r.angle))]
        if bad:
            raise DataError(f"{self.model_tag}: non-finite predictions for {bad[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def sample_ids(self) -> list[tuple[str, int]]:
        return [r.sample_id for r in self.records]

    def as_array(self) -> np.ndarray:
        return np.array([[r.speed, r.angle] for r in self.records], dtype=np.float64).reshape(-1, 2)

    @classmethod
    def from_arrays(cls, tag: str, sample_ids: Sequence[tuple[str, int]], values: np.ndarray) -> "PredictionSet":
        values = np.asarray(values, dtype=np.float64)
        return cls(tag, [PredictionRecord((str(c), int(f)), float(s), float(a))
                         for (c, f), (s, a) in zip(sample_ids, values)])


def _check_coverage(sets: Sequence[PredictionSet]) -> None:
    ref = set(sets[0].sample_ids)
    for s in sets[1:]:
        other = set(s.sample_ids)
        if other != ref:
            missing = sorted(ref - other)[:10]
            extra = sorted(other - ref)[:10]
            raise DataError(
                f"sample coverage mismatch between {sets[0].model_tag!r} and {s.model_tag!r}: "
                f"missing {missing}, unexpected {extra}"
            )


def average_predictions(sets: Sequence[PredictionSet], tag: str = "ensemble") -> PredictionSet:
    """Per-sample arithmetic mean, computed exactly and rounded once, so the
    result does not depend on the order of ``sets`` and mean(S, S) == S."""
    if not sets:
        raise DataError("need at least one prediction set to average")
    _check_coverage(sets)
    records = []
    for i, sid in enumerate(sets[0].sample_ids):
        rows = [s.records[i] for s in sets]
        records.append(PredictionRecord(sid, statistics.mean(r.speed for r in rows),
                                        statistics.mean(r.angle for r in rows)))
    return PredictionSet(tag, records)


def mse_metric(preds: PredictionSet, truth: PredictionSet) -> tuple[float, float]:
    """Mean squared error per target over matching sample ids."""
    _check_coverage([truth, preds])
    if not len(truth):
        raise DataError("cannot score an empty prediction set")
    diff = preds.as_array() - truth.as_array()
    sq = diff * diff
    return float(sq[:, 0].mean()), float(sq[:, 1].mean())


def truth_from_manifest(manifest: Manifest) -> PredictionSet:
    return PredictionSet("truth", [PredictionRecord(e.sample_id, float(e.speed), float(e.angle))
                                   for e in manifest.entries])


def combine_columns(speed_set: PredictionSet, angle_set: PredictionSet, tag: str) -> PredictionSet:
    """Speed column from one set, angle column from another (best-per-target checkpoints)."""
    _check_coverage([speed_set, angle_set])
    return PredictionSet(tag, [PredictionRecord(s.sample_id, s.speed, a.angle)
                               for s, a in zip(speed_set.records, angle_set.records)])


def write_submission(preds: PredictionSet, path: str | Path) -> Path:
    path = Path(path)
    if not len(preds):
        log.warning("writing header-only submission for empty set %r", preds.model_tag)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUBMISSION_HEADER)
        for r in preds.records:
            writer.writerow([r.sample_id[0], r.sample_id[1], f"{r.speed:.6f}", f"{r.angle:.6f}"])
    return path


def read_submission(path: str | Path, tag: str | None = None) -> PredictionSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"prediction file not found: {path}")
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SUBMISSION_HEADER:
            raise DataError(f"{path}: header must be {','.join(SUBMISSION_HEADER)}")
        for rowno, row in enumerate(reader, start=2):
            try:
                chapter, frame, speed, angle = row
                records.append(PredictionRecord((chapter, int(frame)), float(speed), float(angle)))
            except ValueError as exc:
                raise DataError(f"{path}: malformed row {rowno}: {row}") from exc
    return PredictionSet(tag or path.stem, records)
