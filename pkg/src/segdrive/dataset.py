"""Frame ingestion: temporal/spatial downsampling, mask one-hot encoding,
channel concatenation, sequence windows and normalization statistics.

Raw data layout consumed by :func:`build_manifest`::

    data_root/
      <chapter>/
        targets.csv          # columns: frame,speed,angle (frame = 10 fps index)
        images/000000.png    # one file per 10 fps frame (.png/.jpg)
        masks/000000.png     # 8-bit label map, value = class index, 255 = ignore

Only frames whose 10 fps index is a multiple of 10 are kept; the kept frame
``k*10`` gets the 1 Hz index ``k``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import yaml
from PIL import Image

from . import FRAME_H, FRAME_W, IGNORE, SEQ_LEN
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

TEMPORAL_STRIDE = 10
STD_FLOOR = 1e-6
SPLITS = ("train", "validation", "test")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

# Cityscapes evaluation classes (label id -> name) plus one aggregate channel.
CITYSCAPES_EVAL_IDS = {
    7: "road", 8: "sidewalk", 11: "building", 12: "wall", 13: "fence",
    17: "pole", 19: "traffic light", 20: "traffic sign", 21: "vegetation",
    22: "terrain", 23: "sky", 24: "person", 25: "rider", 26: "car",
    27: "truck", 28: "bus", 31: "train", 32: "motorcycle", 33: "bicycle",
}
OTHER_CLASS = "other"


# --------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class MaskCodec:
    """Ordered class table; position in ``class_names`` is the channel index.

    ``source_ids`` optionally maps raw label ids (e.g. the 34 Cityscapes ids)
    to channel indices; raw ids absent from it become IGNORE.
    """

    class_names: tuple[str, ...]
    source_ids: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.class_names)) != len(self.class_names):
            raise ConfigError(f"duplicate class names in table: {self.class_names}")
        if len(self.class_names) >= IGNORE:
            raise ConfigError(f"at most {IGNORE} classes fit an 8-bit label map")
        for raw, ch in self.source_ids.items():
            if not 0 <= ch < len(self.class_names):
                raise ConfigError(f"source id {raw} maps to channel {ch} outside [0, {len(self.class_names)})")

    @property
    def num_channels(self) -> int:
        return len(self.class_names)

    @classmethod
    def default(cls) -> "MaskCodec":
        names = tuple(CITYSCAPES_EVAL_IDS.values()) + (OTHER_CLASS,)
        other = len(names) - 1
        source = {}
        for raw in range(34):
            if raw in CITYSCAPES_EVAL_IDS:
                source[raw] = names.index(CITYSCAPES_EVAL_IDS[raw])
            elif raw != 0:  # 0 = unlabeled stays IGNORE
                source[raw] = other
        return cls(names, source)

    @classmethod
    def from_mapping(cls, data: dict) -> "MaskCodec":
        if "classes" not in data:
            raise ConfigError("class table needs a 'classes' entry")
        classes = data["classes"]
        if isinstance(classes, dict):
            # name -> channel index form
            order = sorted(classes.items(), key=lambda kv: kv[1])
            if [idx for _, idx in order] != list(range(len(order))):
                raise ConfigError(f"class channel indices must be exactly 0..{len(order) - 1}")
            names = tuple(str(n) for n, _ in order)
        else:
            names = tuple(str(n) for n in classes)
        source = {}
        for raw, name in (data.get("source_ids") or {}).items():
            if name is None:
                continue
            if name not in names:
                raise ConfigError(f"unknown class name {name!r} for source id {raw}")
            source[int(raw)] = names.index(name)
        return cls(names, source)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "MaskCodec":
        with open(path) as fh:
            return cls.from_mapping(yaml.safe_load(fh) or {})

    def to_mapping(self) -> dict:
        return {
            "classes": {name: i for i, name in enumerate(self.class_names)},
            "source_ids": {raw: self.class_names[ch] for raw, ch in sorted(self.source_ids.items())},
        }

    def remap(self, raw: np.ndarray) -> np.ndarray:
        """Translate raw label ids to channel indices (unmapped ids -> IGNORE)."""
        lut = np.full(256, IGNORE, dtype=np.uint8)
        for src, ch in self.source_ids.items():
            if 0 <= src < 256:
                lut[src] = ch
        return lut[np.asarray(raw, dtype=np.uint8)]


@dataclass
class FrameRecord:
    chapter_id: str
    frame_index: int
    image: np.ndarray
    mask_labels: np.ndarray
    speed: float
    angle: float

    def validate(self, num_classes: int, shape: tuple[int, int] | None = (FRAME_H, FRAME_W)) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DataError(f"frame {self.chapter_id}/{self.frame_index}: image shape {self.image.shape}, expected HxWx3")
        if shape is not None and self.image.shape[:2] != tuple(shape):
            raise DataError(f"frame {self.chapter_id}/{self.frame_index}: image is {self.image.shape[:2]}, expected {tuple(shape)}")
        if self.mask_labels.shape != self.image.shape[:2]:
            raise DataError(f"frame {self.chapter_id}/{self.frame_index}: mask {self.mask_labels.shape} vs image {self.image.shape[:2]}")
        check_labels(self.mask_labels, num_classes)
        if not (math.isfinite(self.speed) and math.isfinite(self.angle)):
            raise DataError(f"frame {self.chapter_id}/{self.frame_index}: non-finite targets")


@dataclass
class SequenceSample:
    """``SEQ_LEN`` consecutive 1 Hz frames, oldest first; targets are the last frame's."""

    frames: list[FrameRecord]

    def __post_init__(self):
        if len(self.frames) != SEQ_LEN:
            raise DataError(f"sequence needs exactly {SEQ_LEN} frames, got {len(self.frames)}")
        chapters = {f.chapter_id for f in self.frames}
        if len(chapters) != 1:
            raise DataError(f"sequence spans chapters {sorted(chapters)}")
        idx = [f.frame_index for f in self.frames]
        if any(b - a != 1 for a, b in zip(idx, idx[1:])):
            raise DataError(f"sequence frame indices not contiguous: {idx}")

    @property
    def sample_id(self) -> tuple[str, int]:
        last = self.frames[-1]
        return (last.chapter_id, last.frame_index)

    @property
    def targets(self) -> tuple[float, float]:
        last = self.frames[-1]
        return (last.speed, last.angle)


@dataclass(frozen=True)
class NormStats:
    image_mean: tuple[float, float, float]
    image_std: tuple[float, float, float]
    speed_mean: float
    speed_std: float
    angle_mean: float
    angle_std: float

    def __post_init__(self):
        stds = list(self.image_std) + [self.speed_std, self.angle_std]
        if any(not math.isfinite(s) or s < STD_FLOOR for s in stds):
            raise DataError(f"std values must be finite and >= {STD_FLOOR}: {stds}")

    @property
    def target_mean(self) -> np.ndarray:
        return np.array([self.speed_mean, self.angle_mean], dtype=np.float64)

    @property
    def target_std(self) -> np.ndarray:
        return np.array([self.speed_std, self.angle_std], dtype=np.float64)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            image_mean=tuple(float(v) for v in d["image_mean"]),
            image_std=tuple(float(v) for v in d["image_std"]),
            speed_mean=float(d["speed_mean"]),
            speed_std=float(d["speed_std"]),
            angle_mean=float(d["angle_mean"]),
            angle_std=float(d["angle_std"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "NormStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ManifestEntry:
    chapter: str
    frame_indices: list[int]
    image_paths: list[str]
    mask_paths: list[str]
    speed: float
    angle: float
    # per-frame targets, oldest first; the last pair equals (speed, angle)
    speeds: list[float] | None = None
    angles: list[float] | None = None

    @property
    def sample_id(self) -> tuple[str, int]:
        return (self.chapter, self.frame_indices[-1])


@dataclass
class Manifest:
    split: str
    entries: list[ManifestEntry]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}; expected one of {SPLITS}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def chapters(self) -> set[str]:
        return {e.chapter for e in self.entries}

    def write(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e)) + "\n")
        meta = {"split": self.split, "count": len(self.entries), "provenance": self.provenance}
        _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def read(cls, path: str | Path, split: str | None = None) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        meta_path = _meta_path(path)
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        entries = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    entries.append(ManifestEntry(**json.loads(line)))
                except (json.JSONDecodeError, TypeError) as exc:
                    raise DataError(f"{path}:{lineno}: bad manifest line ({exc})") from exc
        return cls(split or meta.get("split", "train"), entries, meta.get("provenance", {}))


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def check_disjoint(a: Manifest, b: Manifest) -> None:
    shared = a.chapters & b.chapters
    if shared:
        raise DataError(f"{a.split}/{b.split} share chapters: {sorted(shared)}")


# --------------------------------------------------------------------------
# manifest building


def _read_targets(path: Path) -> dict[int, tuple[float, float]]:
    out: dict[int, tuple[float, float]] = {}
    if not path.exists():
        return out
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                frame = int(row["frame"])
                speed, angle = float(row["speed"]), float(row["angle"])
            except (KeyError, TypeError, ValueError):
                log.warning("%s: unreadable target row %r", path, row)
                continue
            if math.isfinite(speed) and math.isfinite(angle):
                out[frame] = (speed, angle)
    return out


def _index_files(folder: Path) -> dict[int, Path]:
    found: dict[int, Path] = {}
    if not folder.is_dir():
        return found
    for p in sorted(folder.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES and p.stem.isdigit():
            found.setdefault(int(p.stem), p)
    return found


def contiguous_windows(indices: Sequence[int], length: int = SEQ_LEN) -> list[list[int]]:
    """All stride-1 windows of ``length`` consecutive integers within sorted ``indices``."""
    windows = []
    run: list[int] = []
    for i in indices:
        if run and i != run[-1] + 1:
            run = []
        run.append(i)
        if len(run) >= length:
            windows.append(run[-length:])
    return windows


def build_manifest(data_root: str | Path, split_map: dict[str, str]) -> dict[str, Manifest]:
    """Scan ``data_root`` and return one manifest per split.

    Chapters missing from ``split_map`` are skipped. Frames without a target
    or a mask are rejected (logged), and windows never bridge the gap.
    """
    data_root = Path(data_root)
    if not data_root.is_dir():
        raise FileNotFoundError(f"data root not found: {data_root}")
    for chapter, split in split_map.items():
        if split not in SPLITS:
            raise ConfigError(f"chapter {chapter!r}: unknown split {split!r}")

    per_split: dict[str, list[ManifestEntry]] = {s: [] for s in SPLITS}
    for chapter_dir in sorted(p for p in data_root.iterdir() if p.is_dir()):
        chapter = chapter_dir.name
        split = split_map.get(chapter)
        if split is None:
            log.info("chapter %s not in split map, skipped", chapter)
            continue
        targets = _read_targets(chapter_dir / "targets.csv")
        images = _index_files(chapter_dir / "images")
        masks = _index_files(chapter_dir / "masks")

        kept: dict[int, tuple[Path, Path, float, float]] = {}
        for raw_idx in sorted(images):
            if raw_idx % TEMPORAL_STRIDE:
                continue
            if raw_idx not in targets:
                log.warning("chapter %s frame %d: missing target, rejected", chapter, raw_idx)
                continue
            if raw_idx not in masks:
                log.warning("chapter %s frame %d: missing mask, rejected", chapter, raw_idx)
                continue
            kept[raw_idx // TEMPORAL_STRIDE] = (images[raw_idx], masks[raw_idx], *targets[raw_idx])

        windows = contiguous_windows(sorted(kept))
        if not windows:
            log.info("chapter %s: %d retained frames, no full window", chapter, len(kept))
        for win in windows:
            rows = [kept[i] for i in win]
            per_split[split].append(ManifestEntry(
                chapter=chapter,
                frame_indices=list(win),
                image_paths=[str(r[0]) for r in rows],
                mask_paths=[str(r[1]) for r in rows],
                speed=rows[-1][2],
                angle=rows[-1][3],
                speeds=[r[2] for r in rows],
                angles=[r[3] for r in rows],
            ))

    provenance = {"source_root": str(data_root), "temporal_stride": TEMPORAL_STRIDE,
                  "window": SEQ_LEN, "spatial_factor": None}
    return {s: Manifest(s, per_split[s], dict(provenance)) for s in SPLITS}


# --------------------------------------------------------------------------
# spatial ops


def area_downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Mean over non-overlapping ``factor`` x ``factor`` blocks (float64 output)."""
    h, w = image.shape[:2]
    if h % factor or w % factor:
        raise DataError(f"shape {image.shape[:2]} not divisible by factor {factor}")
    rest = image.shape[2:]
    blocks = np.asarray(image, dtype=np.float64).reshape(h // factor, factor, w // factor, factor, *rest)
    return blocks.mean(axis=(1, 3))


def _resize_factor(shape: tuple[int, ...], out_hw: tuple[int, int]) -> int:
    h, w = shape[:2]
    oh, ow = out_hw
    f = h // oh if oh else 0
    if f < 1 or h != oh * f or w != ow * f:
        raise DataError(
            f"unexpected frame shape {h}x{w}; expected an integer multiple of {oh}x{ow} "
            f"(e.g. {oh * 12}x{ow * 12})"
        )
    return f


def resize_frame(image: np.ndarray, out_hw: tuple[int, int] = (FRAME_H, FRAME_W)) -> np.ndarray:
    """Area-average an RGB frame down to ``out_hw`` (1080x1920 -> 90x160 by default)."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"expected HxWx3 image, got shape {image.shape}")
    f = _resize_factor(image.shape, out_hw)
    if f == 1:
        return image.copy()
    return area_downsample(image, f)


def resize_mask(labels: np.ndarray, out_hw: tuple[int, int] = (FRAME_H, FRAME_W)) -> np.ndarray:
    """Nearest-neighbour label downsampling: the centre pixel of each block."""
    if labels.ndim != 2:
        raise DataError(f"expected HxW label map, got shape {labels.shape}")
    f = _resize_factor(labels.shape, out_hw)
    if f == 1:
        return labels.copy()
    return labels[f // 2::f, f // 2::f].copy()


# --------------------------------------------------------------------------
# channel ops


def check_labels(labels: np.ndarray, num_classes: int) -> None:
    bad = (labels >= num_classes) & (labels != IGNORE)
    if bad.any():
        pos = tuple(int(v) for v in np.argwhere(bad)[0])
        raise DataError(f"label {int(labels[pos])} at {pos} outside [0, {num_classes}) and not IGNORE({IGNORE})")


def encode_mask_onehot(mask_labels: np.ndarray, codec: MaskCodec | int) -> np.ndarray:
    """HxW label map -> HxWxC float32 one-hot volume; IGNORE pixels are all zero."""
    c = codec if isinstance(codec, int) else codec.num_channels
    labels = np.asarray(mask_labels)
    check_labels(labels, c)
    return (labels[..., None] == np.arange(c)).astype(np.float32)


def decode_onehot(onehot: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_mask_onehot`; all-zero pixels decode to IGNORE."""
    labels = onehot.argmax(axis=-1).astype(np.uint8)
    labels[onehot.sum(axis=-1) == 0] = IGNORE
    return labels


def concat_channels(image: np.ndarray, onehot: np.ndarray) -> np.ndarray:
    """Stack ``[RGB, mask channels]`` along the last axis."""
    if image.shape[:2] != onehot.shape[:2]:
        raise DataError(f"spatial mismatch: image {image.shape[:2]} vs mask {onehot.shape[:2]}")
    return np.concatenate([image.astype(np.float32), onehot.astype(np.float32)], axis=-1)


def stack_sequence(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate ``SEQ_LEN`` HxWxC volumes along channels, oldest block first."""
    if len(frames) != SEQ_LEN:
        raise DataError(f"expected {SEQ_LEN} frames to stack, got {len(frames)}")
    return np.concatenate(list(frames), axis=-1)


def unstack_sequence(stacked: np.ndarray, length: int = SEQ_LEN) -> list[np.ndarray]:
    if stacked.shape[-1] % length:
        raise DataError(f"{stacked.shape[-1]} channels do not split into {length} blocks")
    return np.split(stacked, length, axis=-1)


# --------------------------------------------------------------------------
# I/O


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise DataError(f"{path}: mask must be single-channel 8-bit, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8)


def save_png(path: str | Path, array: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)


def load_sample(entry: ManifestEntry,
                image_loader: Callable[[str], np.ndarray] = load_image,
                mask_loader: Callable[[str], np.ndarray] = load_mask) -> SequenceSample:
    speeds = entry.speeds or [entry.speed] * SEQ_LEN
    angles = entry.angles or [entry.angle] * SEQ_LEN
    frames = [
        FrameRecord(entry.chapter, idx, image_loader(ip), mask_loader(mp), float(s), float(a))
        for idx, ip, mp, s, a in zip(entry.frame_indices, entry.image_paths, entry.mask_paths, speeds, angles)
    ]
    # manifest targets are authoritative for t=0
    frames[-1].speed, frames[-1].angle = float(entry.speed), float(entry.angle)
    return SequenceSample(frames)


def preprocess_manifest(manifest: Manifest, out_dir: str | Path, codec: MaskCodec,
                        raw_mask_ids: bool = False,
                        out_hw: tuple[int, int] = (FRAME_H, FRAME_W)) -> Manifest:
    """Write resized frames/masks under ``out_dir`` and return a manifest pointing at them.

    With ``raw_mask_ids`` the mask files hold source label ids (e.g. Cityscapes
    0..33) that are remapped through ``codec.source_ids``.
    """
    out_dir = Path(out_dir)
    done: dict[str, str] = {}
    factors = set()

    def convert(src: str, kind: str, chapter: str, idx: int) -> str:
        if src in done:
            return done[src]
        dst = out_dir / kind / chapter / f"{idx:06d}.png"
        if kind == "images":
            img = load_image(src)
            factors.add(_resize_factor(img.shape, out_hw))
            save_png(dst, np.clip(np.rint(resize_frame(img, out_hw)), 0, 255))
        else:
            labels = load_mask(src)
            if raw_mask_ids:
                labels = codec.remap(labels)
            labels = resize_mask(labels, out_hw)
            check_labels(labels, codec.num_channels)
            save_png(dst, labels)
        done[src] = str(dst)
        return done[src]

    entries = []
    for e in manifest.entries:
        entries.append(ManifestEntry(
            chapter=e.chapter,
            frame_indices=list(e.frame_indices),
            image_paths=[convert(p, "images", e.chapter, i) for p, i in zip(e.image_paths, e.frame_indices)],
            mask_paths=[convert(p, "masks", e.chapter, i) for p, i in zip(e.mask_paths, e.frame_indices)],
            speed=e.speed, angle=e.angle, speeds=e.speeds, angles=e.angles,
        ))
    prov = dict(manifest.provenance)
    prov["spatial_factor"] = sorted(factors)[0] if len(factors) == 1 else sorted(factors)
    prov["output_root"] = str(out_dir)
    return Manifest(manifest.split, entries, prov)


# --------------------------------------------------------------------------
# normalization


def _exact_moments(total: int, sq_total: int, n: int) -> tuple[float, float]:
    mean = total / n
    var = (n * sq_total - total * total) / (n * n)
    return mean, math.sqrt(max(var, 0.0))


def compute_norm_stats(manifest: Manifest,
                       image_loader: Callable[[str], np.ndarray] = load_image) -> NormStats:
    """Per-channel pixel mean/std over the unique frames of a train manifest and
    population mean/std of the t=0 targets; every std is floored at 1e-6.

    Pixel moments are accumulated as exact integers, so the result does not
    depend on traversal order.
    """
    if manifest.split != "train":
        raise DataError(f"norm stats must come from the train split, got {manifest.split!r}")
    if not manifest.entries:
        raise DataError("cannot compute norm stats from an empty manifest")

    paths = sorted({p for e in manifest.entries for p in e.image_paths})
    sums = [0, 0, 0]
    sq_sums = [0, 0, 0]
    n = 0
    for p in paths:
        img = np.asarray(image_loader(p))
        if not np.issubdtype(img.dtype, np.integer):
            raise DataError(f"{p}: expected 8-bit pixels for stats, got {img.dtype}")
        flat = img.reshape(-1, 3).astype(np.int64)
        n += flat.shape[0]
        for c in range(3):
            sums[c] += int(flat[:, c].sum())
            sq_sums[c] += int((flat[:, c] * flat[:, c]).sum())

    moments = [_exact_moments(sums[c], sq_sums[c], n) for c in range(3)]
    speeds = [e.speed for e in manifest.entries]
    angles = [e.angle for e in manifest.entries]
    return NormStats(
        image_mean=tuple(m for m, _ in moments),
        image_std=tuple(max(s, STD_FLOOR) for _, s in moments),
        speed_mean=statistics.fmean(speeds),
        speed_std=max(statistics.pstdev(speeds), STD_FLOOR),
        angle_mean=statistics.fmean(angles),
        angle_std=max(statistics.pstdev(angles), STD_FLOOR),
    )


def normalize_image(image: np.ndarray, stats: NormStats) -> np.ndarray:
    mean = np.asarray(stats.image_mean, dtype=np.float32)
    std = np.asarray(stats.image_std, dtype=np.float32)
    return (np.asarray(image, dtype=np.float32) - mean) / std


def normalize_targets(targets, stats: NormStats) -> np.ndarray:
    """``(..., 2)`` array of (speed, angle) -> normalized space."""
    t = np.asarray(targets, dtype=np.float64)
    return (t - stats.target_mean) / stats.target_std


def denormalize_targets(targets, stats: NormStats) -> np.ndarray:
    t = np.asarray(targets, dtype=np.float64)
    return t * stats.target_std + stats.target_mean


def sample_to_volumes(sample: SequenceSample, stats: NormStats, codec: MaskCodec | int) -> list[np.ndarray]:
    """Normalized HxWx(3+C) volume per frame, oldest first."""
    return [
        concat_channels(normalize_image(f.image, stats), encode_mask_onehot(f.mask_labels, codec))
        for f in sample.frames
    ]


def iter_frames(manifest: Manifest) -> Iterable[tuple[str, int, str, str]]:
    """Unique (chapter, frame_index, image_path, mask_path) across all windows."""
    seen = set()
    for e in manifest.entries:
        for idx, ip, mp in zip(e.frame_indices, e.image_paths, e.mask_paths):
            key = (e.chapter, idx)
            if key not in seen:
                seen.add(key)
                yield e.chapter, idx, ip, mp
