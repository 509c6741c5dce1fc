"""Report rendering: radar charts per split, human-vs-metric correlation
scatter grids and attribute-distribution charts, written as PNG next to the
delimited (CSV) tables the figures are drawn from."""

import csv
import math
from pathlib import Path
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_win_ratio_csv(win_ratios: dict, out_csv) -> None:
    """Rows: dimension, model, human win ratio, metric win ratio."""
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dimension", "model_id", "human_win_ratio", "metric_win_ratio"])
        for dim in sorted(win_ratios):
            entry = win_ratios[dim]
            models = sorted(set(entry.get("human", {})) | set(entry.get("metric", {})))
            for m in models:
                writer.writerow([dim, m,
                                 _fmt(entry.get("human", {}).get(m)),
                                 _fmt(entry.get("metric", {}).get(m))])


def write_radar_csv(radar: dict, out_csv) -> None:
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "dimension", "model_id", "normalized", "raw_min", "raw_max"])
        for split in sorted(radar):
            for dim, entry in sorted(radar[split].get("dimensions", {}).items()):
                for m, v in sorted(entry["models"].items()):
                    writer.writerow([split, dim, m, _fmt(v),
                                     _fmt(entry.get("min")), _fmt(entry.get("max"))])


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def render_radar(radar_split: dict, out_png, title: Optional[str] = None) -> None:
    """One radar per split: normalized [0, 1] axes, one polygon per model.
    Degenerate dimensions (no spread) are omitted."""
    dims = [d for d, entry in sorted(radar_split.get("dimensions", {}).items())
            if not entry.get("degenerate")]
    models: Dict[str, List[float]] = {}
    for d in dims:
        for m, v in radar_split["dimensions"][d]["models"].items():
            models.setdefault(m, []).append(v)

    fig, ax = plt.subplots(figsize=(7, 7), subplot_kw={"projection": "polar"})
    if dims and models:
        angles = np.linspace(0, 2 * np.pi, len(dims), endpoint=False).tolist()
        closed = angles + angles[:1]
        for m in sorted(models):
            vals = models[m] + models[m][:1]
            ax.plot(closed, vals, linewidth=1.5, label=m)
            ax.fill(closed, vals, alpha=0.08)
        ax.set_xticks(angles)
        ax.set_xticklabels(dims, fontsize=8)
        ax.set_ylim(0, 1)
        ax.legend(loc="upper right", bbox_to_anchor=(1.25, 1.1), fontsize=8)
    ax.set_title(title or f"split: {radar_split.get('split', '')}")
    fig.savefig(out_png, dpi=120, bbox_inches="tight")
    plt.close(fig)


def render_correlation(win_ratios: dict, pearson: dict, out_png) -> None:
    """Grid of per-dimension scatters: human win ratio (x) vs metric win
    ratio (y), with a least-squares fit line."""
    dims = [d for d in sorted(win_ratios)
            if win_ratios[d].get("human") and win_ratios[d].get("metric")]
    if not dims:
        dims = []
    cols = min(5, max(1, len(dims)))
    rows = max(1, math.ceil(len(dims) / cols)) if dims else 1
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 3.2 * rows), squeeze=False)
    for i, dim in enumerate(dims):
        ax = axes[i // cols][i % cols]
        entry = win_ratios[dim]
        shared = sorted(set(entry["human"]) & set(entry["metric"]))
        x = np.array([entry["human"][m] for m in shared])
        y = np.array([entry["metric"][m] for m in shared])
        ax.scatter(x, y, s=24)
        if len(shared) >= 2 and np.ptp(x) > 0:
            slope, intercept = np.polyfit(x, y, 1)
            xs = np.linspace(x.min(), x.max(), 16)
            ax.plot(xs, slope * xs + intercept, color="red", linewidth=1.0)
        rho = pearson.get(dim)
        label = f"{dim}" + (f"  ρ={rho:.4f}" if isinstance(rho, float) else "")
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("human win ratio", fontsize=8)
        ax.set_ylabel("metric win ratio", fontsize=8)
        ax.tick_params(labelsize=7)
    for j in range(len(dims), rows * cols):
        axes[j // cols][j % cols].axis("off")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def render_distribution(distribution: Dict[str, Dict[str, int]], out_png,
                        title: str = "") -> None:
    """Bar chart per attribute key showing the tier's value composition."""
    keys = sorted(distribution)
    if not keys:
        keys = []
    cols = min(3, max(1, len(keys)))
    rows = max(1, math.ceil(len(keys) / cols)) if keys else 1
    fig, axes = plt.subplots(rows, cols, figsize=(4.2 * cols, 3.0 * rows), squeeze=False)
    for i, key in enumerate(keys):
        ax = axes[i // cols][i % cols]
        values = distribution[key]
        names = list(values)
        counts = [values[n] for n in names]
        ax.bar(range(len(names)), counts)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
        ax.set_title(key, fontsize=9)
        ax.tick_params(labelsize=7)
    for j in range(len(keys), rows * cols):
        axes[j // cols][j % cols].axis("off")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def write_distribution_csv(distribution: Dict[str, Dict[str, int]], tier: str, out_csv) -> None:
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tier", "attribute", "value", "count"])
        for key in sorted(distribution):
            for value, count in sorted(distribution[key].items()):
                writer.writerow([tier, key, value, count])


def render_report(align_dir: Optional[str], curate_report: Optional[str], out_dir) -> List[str]:
    """Render every figure the available inputs support; returns the files
    written (figures plus their CSV companions)."""
    import json

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[str] = []

    if align_dir:
        align_dir = Path(align_dir)
        win_path = align_dir / "win_ratios.json"
        pearson_path = align_dir / "pearson.json"
        radar_path = align_dir / "radar.json"
        if win_path.is_file():
            win_ratios = json.loads(win_path.read_text(encoding="utf-8"))
            pearson = (json.loads(pearson_path.read_text(encoding="utf-8"))
                       if pearson_path.is_file() else {})
            csv_path = out_dir / "win_ratios.csv"
            write_win_ratio_csv(win_ratios, csv_path)
            png_path = out_dir / "correlation.png"
            render_correlation(win_ratios, pearson, png_path)
            written += [str(csv_path), str(png_path)]
        if radar_path.is_file():
            radar = json.loads(radar_path.read_text(encoding="utf-8"))
            csv_path = out_dir / "radar.csv"
            write_radar_csv(radar, csv_path)
            written.append(str(csv_path))
            for split, payload in sorted(radar.items()):
                png_path = out_dir / f"radar_{split}.png"
                render_radar(payload, png_path, title=f"split: {split}")
                written.append(str(png_path))

    if curate_report:
        report = json.loads(Path(curate_report).read_text(encoding="utf-8"))
        for tier, dist in sorted(report.get("distribution", {}).items()):
            csv_path = out_dir / f"distribution_{tier}.csv"
            write_distribution_csv(dist, tier, csv_path)
            png_path = out_dir / f"distribution_{tier}.png"
            render_distribution(dist, png_path, title=f"{tier} subset composition")
            written += [str(csv_path), str(png_path)]

    return written
