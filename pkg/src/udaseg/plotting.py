"""Report figures written next to the CSV outputs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed class palette for colourised predictions (RGB, 0-255)
CLASS_PALETTE = np.array(
    [
        [128, 128, 128],
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [255, 225, 25],
        [145, 30, 180],
        [70, 240, 240],
        [245, 130, 48],
    ],
    dtype=np.uint8,
)


def colorize(labels: np.ndarray) -> np.ndarray:
    """Class-index raster to RGB floats using :data:`CLASS_PALETTE` (cycled)."""
    return CLASS_PALETTE[labels % len(CLASS_PALETTE)].astype(np.float64) / 255.0


def _figure(width=6.0, height=None):
    golden_ratio = (np.sqrt(5) - 1.0) / 2.0
    if not height:
        height = width * golden_ratio
    fig, ax = plt.subplots(figsize=(width, height), facecolor="w")
    return fig, ax


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def plot_losses(loss_csv, out_png, smooth: int = 25):
    with Path(loss_csv).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    fig, ax = _figure()
    if rows:
        arr = np.array(rows, dtype=float)
        for col, label in ((1, "L_S_mix"), (2, "L_T_adj"), (3, "L_total")):
            y = arr[:, col]
            if len(y) >= smooth:
                y = np.convolve(y, np.ones(smooth) / smooth, mode="valid")
                x = arr[smooth - 1 :, 0]
            else:
                x = arr[:, 0]
            ax.plot(x, y, label=label, lw=1.2)
        ax.legend(frameon=False)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    _save(fig, out_png)


def plot_class_scores(report, out_png, class_names=None):
    k = len(report.iou)
    names = class_names or [f"class_{i}" for i in range(k)]
    fig, ax = _figure()
    pos = np.arange(k)
    ax.bar(pos - 0.2, np.nan_to_num(report.iou), 0.4, label="IoU")
    ax.bar(pos + 0.2, np.nan_to_num(report.f1), 0.4, label="F1")
    ax.set_xticks(pos)
    ax.set_xticklabels(names)
    ax.set_ylim(0, 1)
    ax.set_title(f"mIoU {report.miou:.3f}  mF1 {report.mf1:.3f}")
    ax.legend(frameon=False)
    _save(fig, out_png)


def plot_ablation(rows, out_png):
    """``rows``: list of ``(variant, per_seed_mious)``."""
    fig, ax = _figure(7.0)
    pos = np.arange(len(rows))
    means = [np.mean(v) for _, v in rows]
    sds = [np.std(v, ddof=1) if len(v) > 1 else 0.0 for _, v in rows]
    ax.bar(pos, means, yerr=sds, capsize=4, color="0.6")
    for i, (_, vals) in enumerate(rows):
        ax.plot(np.full(len(vals), i), vals, "k.", ms=4)
    ax.set_xticks(pos)
    ax.set_xticklabels([r[0] for r in rows], rotation=20, ha="right")
    ax.set_ylabel("target mIoU")
    _save(fig, out_png)
