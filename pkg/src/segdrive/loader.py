"""Torch view over manifests: per-model input tensors and normalized targets."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch.utils.data import Dataset

from .augment import AugmentConfig, apply_augmentation
from .dataset import (Manifest, MaskCodec, NormStats, SequenceSample, load_image, load_mask,
                      load_sample, normalize_targets, sample_to_volumes, stack_sequence)

MODES = {"A": "single", "B": "stacked", "C": "sequence"}


def to_model_input(volumes: Sequence[np.ndarray], mode: str) -> torch.Tensor:
    """Per-frame HxWxC volumes (oldest first) -> the tensor layout a model expects."""
    if mode == "single":
        arr = volumes[-1].transpose(2, 0, 1)
    elif mode == "stacked":
        arr = stack_sequence(volumes).transpose(2, 0, 1)
    elif mode == "sequence":
        arr = np.stack([v.transpose(2, 0, 1) for v in volumes])
    else:
        raise ValueError(f"unknown input mode {mode!r}")
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))


class SequenceDataset(Dataset):
    """Items are ``(x, y_normalized, index)``.

    Either backed by a manifest (frames loaded lazily and cached) or by an
    in-memory list of :class:`SequenceSample`. When ``augment`` is set, call
    :meth:`set_epoch` before each pass.
    """

    def __init__(self, source: Manifest | Sequence[SequenceSample], stats: NormStats,
                 codec: MaskCodec | int, mode: str, augment: AugmentConfig | None = None,
                 seed: int = 0, cache: bool = True):
        if mode in MODES:
            mode = MODES[mode]
        self.mode = mode
        self.stats = stats
        self.codec = codec
        self.augment = augment
        self.seed = seed
        self.epoch = 0
        self._cache: dict[str, np.ndarray] | None = {} if cache else None
        if isinstance(source, Manifest):
            self.manifest: Manifest | None = source
            self.samples: list[SequenceSample] | None = None
            self.sample_ids = [e.sample_id for e in source.entries]
            self.raw_targets = np.array([[e.speed, e.angle] for e in source.entries], dtype=np.float64)
        else:
            self.manifest = None
            self.samples = list(source)
            self.sample_ids = [s.sample_id for s in self.samples]
            self.raw_targets = np.array([s.targets for s in self.samples], dtype=np.float64)
        self.raw_targets = self.raw_targets.reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.sample_ids)

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def _cached(self, path: str, loader) -> np.ndarray:
        if self._cache is None:
            return loader(path)
        if path not in self._cache:
            self._cache[path] = loader(path)
        return self._cache[path]

    def sample(self, i: int) -> SequenceSample:
        if self.samples is not None:
            return self.samples[i]
        return load_sample(self.manifest.entries[i],
                           image_loader=lambda p: self._cached(p, load_image),
                           mask_loader=lambda p: self._cached(p, load_mask))

    def __getitem__(self, i: int):
        sample = self.sample(i)
        if self.augment is not None:
            sample = apply_augmentation(sample, self.augment, self.seed, self.epoch)
        x = to_model_input(sample_to_volumes(sample, self.stats, self.codec), self.mode)
        y = torch.from_numpy(normalize_targets(sample.targets, self.stats).astype(np.float32))
        return x, y, i
