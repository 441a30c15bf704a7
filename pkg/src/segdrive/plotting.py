from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataError  # noqa: E402
from .training import read_history  # noqa: E402

SERIES = ("lr", "train_loss", "val_mse_speed", "val_mse_angle")


def plot_history(history_csv: str | Path, out_path: str | Path) -> tuple[Path, Path]:
    """Loss/MSE-vs-epoch curves as a PNG, plus the plotted series as a CSV
    next to it (one row per epoch)."""
    rows = read_history(history_csv)
    if not rows:
        raise DataError(f"{history_csv}: history is empty")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tidy_path = out_path.with_suffix(".csv")

    with open(tidy_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("epoch",) + SERIES)
        for r in rows:
            writer.writerow([r["epoch"]] + [repr(float(r[k])) for k in SERIES])

    epochs = [r["epoch"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    for ax, key, title in zip(axes, SERIES[1:], ("train loss (normalized)", "val MSE speed", "val MSE angle")):
        ax.plot(epochs, [r[key] for r in rows], marker="o", markersize=2)
        ax.set_title(title)
        ax.set_xlabel("epoch")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return out_path, tidy_path
