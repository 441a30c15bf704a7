"""Seeded, label-correcting augmentation of whole sequences.

Transforms run on raw 8-bit frames, before normalization. Geometric transforms
use one set of parameters for all frames of a sample.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, replace

import numpy as np

from . import IGNORE
from .dataset import SequenceSample
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class AugmentConfig:
    gate_p: float = 0.8
    flip_p: float = 0.5
    brightness_p: float = 0.1
    brightness_range: tuple[float, float] = (0.2, 0.75)
    shift_p: float = 0.25
    max_shift_frac: tuple[float, float] = (0.2, 0.1)  # (x, y)
    # angle units added per unit of horizontal shift fraction
    angle_per_unit_shift: float = 30.0

    def __post_init__(self):
        for name in ("gate_p", "flip_p", "brightness_p", "shift_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"augment.{name}={p} outside [0, 1]")
        lo, hi = self.brightness_range
        if not 0.0 < lo <= hi < math.inf:
            raise ConfigError(f"augment.brightness_range={self.brightness_range} must satisfy 0 < low <= high")
        for v in self.max_shift_frac:
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"augment.max_shift_frac={self.max_shift_frac} entries must lie in [0, 1)")

    @classmethod
    def from_mapping(cls, data: dict | None) -> "AugmentConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown augment keys: {sorted(unknown)}")
        for key in ("brightness_range", "max_shift_frac"):
            if key in data:
                data[key] = tuple(float(v) for v in data[key])
        return cls(**data)


@dataclass(frozen=True)
class AugmentPlan:
    """Outcome of the random draws for one (sample, epoch)."""

    gated: bool = False
    flip: bool = False
    brightness: float | None = None
    shift: tuple[float, float] | None = None

    @property
    def is_identity(self) -> bool:
        return not (self.flip or self.brightness is not None or self.shift is not None)


def sample_rng(sample_id: tuple[str, int], epoch: int, seed: int) -> np.random.Generator:
    """Independent stream per (sample, epoch, seed); stable across processes."""
    chapter, frame = sample_id
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(epoch), zlib.crc32(str(chapter).encode()), int(frame)]
    return np.random.default_rng(np.random.SeedSequence(words))


def draw_plan(rng: np.random.Generator, cfg: AugmentConfig) -> AugmentPlan:
    # Draw every variate unconditionally so the stream layout is fixed.
    u = rng.random(4)
    factor = rng.uniform(*cfg.brightness_range)
    dx = rng.uniform(-cfg.max_shift_frac[0], cfg.max_shift_frac[0])
    dy = rng.uniform(-cfg.max_shift_frac[1], cfg.max_shift_frac[1])
    if not u[0] < cfg.gate_p:
        return AugmentPlan()
    return AugmentPlan(
        gated=True,
        flip=bool(u[1] < cfg.flip_p),
        brightness=float(factor) if u[2] < cfg.brightness_p else None,
        shift=(float(dx), float(dy)) if u[3] < cfg.shift_p else None,
    )


# --------------------------------------------------------------------------
# transforms


def hflip_sample(sample: SequenceSample) -> SequenceSample:
    """Mirror every frame and mask about the vertical axis; negate all angles."""
    frames = [
        replace(f, image=f.image[:, ::-1].copy(), mask_labels=f.mask_labels[:, ::-1].copy(), angle=-f.angle)
        for f in sample.frames
    ]
    return SequenceSample(frames)


def adjust_brightness(image: np.ndarray, factor: float, max_value: float = 255.0) -> np.ndarray:
    """Scale raw pixels by ``factor`` and clip to ``[0, max_value]``; dtype is kept."""
    if not factor > 0:
        raise DataError(f"brightness factor must be positive, got {factor}")
    out = np.clip(np.asarray(image, dtype=np.float32) * np.float32(factor), 0.0, max_value)
    if np.issubdtype(np.asarray(image).dtype, np.integer):
        return np.rint(out).astype(image.dtype)
    return out.astype(image.dtype)


def brighten_sample(sample: SequenceSample, factor: float) -> SequenceSample:
    return SequenceSample([replace(f, image=adjust_brightness(f.image, factor)) for f in sample.frames])


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _translate(arr: np.ndarray, dx: int, dy: int, fill) -> np.ndarray:
    h, w = arr.shape[:2]
    out = np.full_like(arr, fill)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_y = slice(max(0, -dy), h - max(0, dy))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    out[dst_y, dst_x] = arr[src_y, src_x]
    return out


def shift_sample(sample: SequenceSample, dx_frac: float, dy_frac: float, K: float = 30.0,
                 max_shift_frac: tuple[float, float] = (0.2, 0.1)) -> SequenceSample:
    """Translate all frames by ``(round(dx_frac*W), round(dy_frac*H))`` pixels.

    Positive ``dx_frac`` moves content right, positive ``dy_frac`` moves it down.
    Vacated pixels become 0 (image) and IGNORE (mask). Every angle gains
    ``K * dx_frac``; vertical shifts leave targets alone.
    """
    if abs(dx_frac) > max_shift_frac[0] or abs(dy_frac) > max_shift_frac[1]:
        raise DataError(f"shift ({dx_frac}, {dy_frac}) exceeds limits {max_shift_frac}")
    h, w = sample.frames[0].image.shape[:2]
    dx, dy = _round_half_away(dx_frac * w), _round_half_away(dy_frac * h)
    delta = K * dx_frac
    frames = [
        replace(f,
                image=_translate(f.image, dx, dy, 0),
                mask_labels=_translate(f.mask_labels, dx, dy, IGNORE),
                angle=f.angle + delta)
        for f in sample.frames
    ]
    return SequenceSample(frames)


def apply_plan(sample: SequenceSample, plan: AugmentPlan, cfg: AugmentConfig) -> SequenceSample:
    if plan.flip:
        sample = hflip_sample(sample)
    if plan.brightness is not None:
        sample = brighten_sample(sample, plan.brightness)
    if plan.shift is not None:
        sample = shift_sample(sample, *plan.shift, K=cfg.angle_per_unit_shift, max_shift_frac=cfg.max_shift_frac)
    return sample


def apply_augmentation(sample: SequenceSample, cfg: AugmentConfig, rng_seed: int,
                       epoch: int = 0) -> SequenceSample:
    """Gate the sample with ``cfg.gate_p``; if gated, consider flip, brightness and
    shift as independent trials. Deterministic in (sample id, epoch, seed)."""
    plan = draw_plan(sample_rng(sample.sample_id, epoch, rng_seed), cfg)
    if plan.is_identity:
        return sample
    return apply_plan(sample, plan, cfg)
