"""Figures written next to the text/CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import WARD_KEYS  # noqa: E402

MODE_COLORS = {"window": "#4c72b0", "full": "#dd8452"}
WARD_COLORS = ("#8172b2", "#c44e52", "#55a868", "#ccb974", "#64b5cd", "#937860")


def _style():
    plt.rcParams.update({
        "font.size": 9,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "savefig.dpi": 150,
        "savefig.bbox": "tight",
        # fixed metadata keeps repeated renders identical
        "svg.hashsalt": "wstal",
    })


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_map_by_model(summary, path) -> Path:
    """Grouped bars of mAP per model, one bar per inference mode."""
    _style()
    keys = list(summary)
    modes = [m for m in ("window", "full") if any(m in summary[k] for k in keys)]
    x = np.arange(len(keys))
    width = 0.8 / max(len(modes), 1)
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(keys) + 1.5), 3.2))
    for i, mode in enumerate(modes):
        vals = [summary[k].get(mode, {}).get("mAP", np.nan) for k in keys]
        ax.bar(x + (i - (len(modes) - 1) / 2) * width, vals, width, label=mode,
               color=MODE_COLORS[mode])
    ax.set_xticks(x)
    ax.set_xticklabels(keys, rotation=30, ha="right")
    ax.set_ylabel("mAP (%)")
    ax.set_ylim(0, 100)
    ax.legend(frameon=False)
    return _save(fig, Path(path))


def plot_misalignment(summary, path, mode: str = "full") -> Path:
    """Stacked misalignment ratios per model for one inference mode."""
    _style()
    keys = [k for k in summary if mode in summary[k]]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(keys) + 1.5), 3.2))
    bottom = np.zeros(len(keys))
    for name, color in zip(WARD_KEYS, WARD_COLORS):
        vals = np.array([summary[k][mode][name] for k in keys])
        ax.bar(keys, vals, bottom=bottom, label=name, color=color)
        bottom += vals
    ax.set_ylabel(f"misalignment ratio (%), {mode}")
    ax.tick_params(axis="x", labelrotation=30)
    ax.legend(frameon=False, ncol=3, fontsize=7)
    return _save(fig, Path(path))


def plot_ap_vs_threshold(map_per_threshold: dict, path) -> Path:
    _style()
    ts = sorted(map_per_threshold)
    fig, ax = plt.subplots(figsize=(3.6, 2.8))
    ax.plot(ts, [100 * map_per_threshold[t] for t in ts], marker="o", color="#4c72b0")
    ax.set_xlabel("tIoU threshold")
    ax.set_ylabel("mAP (%)")
    ax.set_ylim(0, 105)
    return _save(fig, Path(path))


def write_figures(summary, out_dir) -> list[Path]:
    out = Path(out_dir)
    paths = [plot_map_by_model(summary, out / "map_by_model.png")]
    for mode in ("window", "full"):
        if any(mode in v for v in summary.values()):
            paths.append(plot_misalignment(summary, out / f"misalignment_{mode}.png", mode))
    return paths
