"""``drive <command> --config <path> [--set k=v]... [--seed N]``

Exit codes: 0 success, 1 validation error (bad config, missing input), 2
runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import torch
import yaml
from filelock import FileLock, Timeout

from .checkpoint import checkpoint_name, config_hash, find_checkpoint, restore_model, save_checkpoint
from .config import RunConfig, load_config
from .dataset import (Manifest, NormStats, build_manifest, check_disjoint, compute_norm_stats, denormalize_targets,
                      preprocess_manifest)
from .ensemble import (PredictionSet, average_predictions, combine_columns, mse_metric, read_submission,
                       truth_from_manifest, write_submission)
from .errors import ConfigError, DataError
from .loader import SequenceDataset
from .models import build_model, parameter_count
from .plotting import plot_history
from .training import predict_normalized, train, write_history

log = logging.getLogger("segdrive")

COMMANDS = ("preprocess", "stats", "train", "predict", "ensemble", "evaluate", "plot")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="drive", description="Speed/steering prediction pipeline with segmentation-mask inputs.")
    p.add_argument("command", choices=COMMANDS, metavar="command", help=" | ".join(COMMANDS))
    p.add_argument("--config", type=Path, help="YAML run config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value (dotted key), repeatable")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--run-dir", type=Path, help="use this run directory instead of the latest one")
    p.add_argument("--show-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


# --------------------------------------------------------------------------
# run directories


def run_key(cfg: RunConfig) -> str:
    return config_hash({
        "root": str(cfg.data_root),
        "splits": cfg.splits,
        "classes": cfg.codec.to_mapping(),
        "raw_mask_ids": cfg.raw_mask_ids,
    })


def new_run_dir(cfg: RunConfig) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%S")
    base = cfg.output_dir / f"{run_key(cfg)}-{stamp}"
    path, n = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{n}")
        n += 1
    path.mkdir(parents=True)
    return path


def latest_run_dir(cfg: RunConfig) -> Path:
    found = sorted(p for p in cfg.output_dir.glob(f"{run_key(cfg)}-*") if p.is_dir())
    if not found:
        raise FileNotFoundError(f"no run directory for this config under {cfg.output_dir}; run `drive preprocess` first")
    return found[-1]


def manifest_path(run_dir: Path, split: str) -> Path:
    return run_dir / "manifests" / f"{split}.jsonl"


def read_manifest(run_dir: Path, split: str) -> Manifest:
    return Manifest.read(manifest_path(run_dir, split), split)


def read_stats(run_dir: Path) -> NormStats:
    path = run_dir / "stats.json"
    if not path.exists():
        raise FileNotFoundError(f"norm stats not found: {path} (run `drive stats`)")
    return NormStats.load(path)


def predictions_path(run_dir: Path, tag: str) -> Path:
    return run_dir / "predictions" / f"{tag}.csv"


# --------------------------------------------------------------------------
# commands


def cmd_preprocess(cfg: RunConfig, run_dir: Path) -> None:
    if cfg.data_root is None:
        raise ConfigError("data.root is not set (config or $DRIVE_DATA_ROOT)")
    if not cfg.splits:
        raise ConfigError("data.splits is empty; map each chapter to train/validation/test")
    manifests = build_manifest(cfg.data_root, cfg.splits)
    check_disjoint(manifests["train"], manifests["validation"])
    (run_dir / "manifests").mkdir(exist_ok=True)
    for split, m in manifests.items():
        m = preprocess_manifest(m, run_dir / "frames", cfg.codec, cfg.raw_mask_ids)
        m.provenance["seed"] = cfg.seed
        m.write(manifest_path(run_dir, split))
        print(f"{split}: {len(m)} sequences from {len(m.chapters)} chapters")
    (run_dir / "class_table.yaml").write_text(yaml.safe_dump(cfg.codec.to_mapping(), sort_keys=False))
    (run_dir / "config.yaml").write_text(yaml.safe_dump(cfg.raw, sort_keys=False))
    print(f"run directory: {run_dir}")


def cmd_stats(cfg: RunConfig, run_dir: Path) -> None:
    stats = compute_norm_stats(read_manifest(run_dir, "train"))
    stats.save(run_dir / "stats.json")
    print(json.dumps(stats.to_dict(), indent=2))


def cmd_train(cfg: RunConfig, run_dir: Path) -> None:
    tcfg = cfg.train_config()
    train_m = read_manifest(run_dir, "train")
    val_m = read_manifest(run_dir, "validation")
    check_disjoint(train_m, val_m)
    stats = read_stats(run_dir)
    mid = tcfg.model_id

    arch = cfg.arch
    if mid == "C" and "model_a" in arch.extractors and not arch.model_a_checkpoint:
        try:
            found = find_checkpoint(run_dir / "checkpoints", "A", "angle")
            arch = replace(arch, model_a_checkpoint=str(found))
            log.info("model C: using trained model A trunk from %s", found.name)
        except FileNotFoundError:
            log.warning("model C: no model A checkpoint in this run; its model_a extractor starts untrained")

    torch.manual_seed(cfg.seed)
    model = build_model(mid, arch)
    log.info("model %s: %d parameters (%d trainable)", mid, parameter_count(model),
             parameter_count(model, trainable_only=True))
    augment = cfg.augment if tcfg.augment else None
    train_set = SequenceDataset(train_m, stats, cfg.codec, mid, augment=augment, seed=cfg.seed)
    val_set = SequenceDataset(val_m, stats, cfg.codec, mid)
    result = train(model, train_set, val_set, tcfg, stats)

    ckpt_dir = run_dir / "checkpoints"
    for target, snap in (("speed", result.best_speed), ("angle", result.best_angle)):
        for stale in ckpt_dir.glob(f"model_{mid}_{target}_epoch*.pt"):
            stale.unlink()
        path = save_checkpoint(
            ckpt_dir / checkpoint_name(mid, target, snap.meta.epoch),
            model_id=mid, arch=arch.to_dict(), state_dict=snap.state_dict, stats=stats,
            epoch=snap.meta.epoch, val_mse_speed=snap.meta.val_mse_speed,
            val_mse_angle=snap.meta.val_mse_angle, best_for=target, train_config=tcfg.to_dict(),
        )
        print(f"best {target}: epoch {snap.meta.epoch} "
              f"(val mse speed {snap.meta.val_mse_speed:.6f}, angle {snap.meta.val_mse_angle:.6f}) -> {path.name}")
    write_history(result.history, run_dir / f"history_{mid}.csv")


def predict_model(run_dir: Path, model_id: str, manifest: Manifest, cfg: RunConfig) -> PredictionSet:
    """Speed from the best-speed checkpoint, angle from the best-angle checkpoint."""
    columns = {}
    for target in ("speed", "angle"):
        model, stats, _ = restore_model(find_checkpoint(run_dir / "checkpoints", model_id, target))
        data = SequenceDataset(manifest, stats, cfg.codec, model_id)
        preds = denormalize_targets(predict_normalized(model, data), stats)
        columns[target] = PredictionSet.from_arrays(f"{model_id}-{target}", data.sample_ids, preds)
    return combine_columns(columns["speed"], columns["angle"], model_id)


def cmd_predict(cfg: RunConfig, run_dir: Path) -> None:
    split = cfg.raw["predict"]["split"]
    preds = predict_model(run_dir, cfg.model_id, read_manifest(run_dir, split), cfg)
    out = predictions_path(run_dir, cfg.model_id)
    out.parent.mkdir(exist_ok=True)
    write_submission(preds, out)
    print(f"{len(preds)} predictions for model {cfg.model_id} on {split} -> {out}")


def cmd_ensemble(cfg: RunConfig, run_dir: Path) -> None:
    sets = [read_submission(predictions_path(run_dir, m), m) for m in cfg.ensemble_members]
    out = predictions_path(run_dir, "ensemble")
    write_submission(average_predictions(sets), out)
    print(f"averaged {', '.join(cfg.ensemble_members)} -> {out}")


def cmd_evaluate(cfg: RunConfig, run_dir: Path) -> None:
    ev = cfg.raw["evaluate"]
    name = str(ev["predictions"])
    path = Path(name) if name.endswith(".csv") else predictions_path(run_dir, name)
    preds = read_submission(path)
    truth = truth_from_manifest(read_manifest(run_dir, ev["split"]))
    mse_s, mse_a = mse_metric(preds, truth)
    print(f"mse_speed {mse_s:.6f}")
    print(f"mse_angle {mse_a:.6f}")
    (run_dir / f"metrics_{path.stem}.json").write_text(json.dumps(
        {"predictions": str(path), "split": ev["split"], "n": len(truth),
         "mse_speed": mse_s, "mse_angle": mse_a}, indent=2))


def cmd_plot(cfg: RunConfig, run_dir: Path) -> None:
    history = cfg.raw["plot"].get("history") or run_dir / f"history_{cfg.model_id}.csv"
    history = Path(history)
    if not history.exists():
        raise FileNotFoundError(f"history not found: {history}")
    image, tidy = plot_history(history, run_dir / "plots" / f"{history.stem}.png")
    print(f"{image}\n{tidy}")


HANDLERS = {
    "preprocess": cmd_preprocess,
    "stats": cmd_stats,
    "train": cmd_train,
    "predict": cmd_predict,
    "ensemble": cmd_ensemble,
    "evaluate": cmd_evaluate,
    "plot": cmd_plot,
}


def dispatch(command: str, config_path: str | Path | None, overrides: list[str] | None = None,
             seed: int | None = None, run_dir: Path | None = None) -> int:
    try:
        cfg = load_config(config_path, overrides, seed)
        torch.set_num_threads(max(cfg.num_threads, 1))
        if command == "preprocess":
            rd = run_dir or new_run_dir(cfg)
            rd.mkdir(parents=True, exist_ok=True)
        else:
            rd = run_dir or latest_run_dir(cfg)
            if not rd.is_dir():
                raise FileNotFoundError(f"run directory not found: {rd}")
        with FileLock(str(rd / ".lock"), timeout=0):
            HANDLERS[command](cfg, rd)
        return 0
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Timeout:
        print(f"error: run directory {rd} is locked by another command", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.show_config:
        try:
            cfg = load_config(args.config, args.overrides, args.seed)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        resolved = cfg.raw | {"augment": asdict(cfg.augment), "model": cfg.arch.to_dict()}
        print(yaml.safe_dump(json.loads(json.dumps(resolved, default=str)), sort_keys=False))
        return 0
    return dispatch(args.command, args.config, args.overrides, args.seed, args.run_dir)


if __name__ == "__main__":
    sys.exit(main())
