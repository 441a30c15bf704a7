"""Synthetic chapters in the raw on-disk layout, for tests and demos.

Frame content is a function of the targets (overall brightness follows speed,
a bright lane marker moves with angle) so models have something to learn.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import FRAME_H, FRAME_W, IGNORE
from .dataset import TEMPORAL_STRIDE, save_png


def chapter_targets(n_raw_frames: int, phase: float = 0.0) -> np.ndarray:
    t = np.arange(n_raw_frames) / TEMPORAL_STRIDE
    speed = 12.0 + 6.0 * np.sin(0.11 * t + phase)
    angle = 25.0 * np.sin(0.07 * t + 2 * phase)
    return np.stack([speed, angle], axis=1)


def render_frame(speed: float, angle: float, rng: np.random.Generator,
                 hw: tuple[int, int] = (FRAME_H, FRAME_W), num_classes: int = 20) -> tuple[np.ndarray, np.ndarray]:
    h, w = hw
    img = rng.integers(0, 40, size=(h, w, 3)).astype(np.float64)
    img += np.clip(speed * 8.0, 0, 180)
    col = int(np.clip(w / 2 + angle / 50.0 * (w / 2), 0, w - 1))
    lo, hi = max(col - w // 20, 0), min(col + w // 20 + 1, w)
    img[h // 2:, lo:hi, 0] = 250

    mask = np.zeros((h, w), dtype=np.uint8)  # road
    mask[: h // 3] = 10 % num_classes  # sky
    mask[h // 3: h // 2] = 2 % num_classes  # building
    mask[h // 2:, lo:hi] = 13 % num_classes  # car-like marker
    mask[0, :] = IGNORE
    return np.clip(img, 0, 255).astype(np.uint8), mask


def make_synthetic_chapter(root: str | Path, chapter: str, n_raw_frames: int, seed: int = 0,
                           hw: tuple[int, int] = (FRAME_H, FRAME_W), num_classes: int = 20,
                           only_retained: bool = False) -> Path:
    """Write ``root/chapter`` with ``n_raw_frames`` 10 fps frames, masks and targets.

    ``only_retained`` skips image files the 1:10 temporal subsampling would
    drop anyway (targets are still written for every frame).
    """
    out = Path(root) / chapter
    rng = np.random.default_rng(seed)
    targets = chapter_targets(n_raw_frames, phase=float(seed % 7))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "targets.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "speed", "angle"])
        for i, (s, a) in enumerate(targets):
            writer.writerow([i, f"{s:.6f}", f"{a:.6f}"])
    for i, (s, a) in enumerate(targets):
        if only_retained and i % TEMPORAL_STRIDE:
            continue
        img, mask = render_frame(s, a, rng, hw, num_classes)
        save_png(out / "images" / f"{i:06d}.png", img)
        save_png(out / "masks" / f"{i:06d}.png", mask)
    return out


DEMO_SPLITS = {"syn_train_0": "train", "syn_train_1": "train", "syn_val": "validation", "syn_test": "test"}


def main(argv: list[str] | None = None) -> int:
    import argparse

    p = argparse.ArgumentParser(prog="python -m segdrive.synthetic",
                                description="Write small synthetic chapters for a demo run.")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--raw-frames", type=int, default=500, help="10 fps frames per chapter (default 500)")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    for i, chapter in enumerate(DEMO_SPLITS):
        make_synthetic_chapter(args.out_dir, chapter, args.raw_frames, seed=args.seed + i, only_retained=True)
    print(f"wrote {len(DEMO_SPLITS)} chapters under {args.out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
