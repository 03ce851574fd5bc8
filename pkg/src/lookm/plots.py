"""Figure rendering for run and sweep reports.

Figures are a convenience layer next to the delimited outputs; the CSV/JSON
files remain the machine contract. Everything renders through the Agg
backend straight to files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def render_divergence_traces(cells: dict[str, list[list[float]]], path: Path | str) -> Path:
    """Per-step divergence, one line per cell (seed-averaged)."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, traces in cells.items():
        steps = range(1, len(traces[0]) + 1)
        mean = [sum(t[i] for t in traces) / len(traces) for i in range(len(traces[0]))]
        ax.plot(steps, mean, marker="o", markersize=3, label=label)
    ax.set_xlabel("decode step")
    ax.set_ylabel("cosine distance to full cache")
    ax.set_title("Output divergence by decode step")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def render_budget_curves(rows: list[dict], out_dir: Path | str, stem: str = "budget") -> list[Path]:
    """Divergence and memory-ratio curves against total budget, per cell family.

    Rows are compare-style dicts; the x axis is alpha1 + alpha2.
    """
    out_dir = Path(out_dir)
    families: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        families.setdefault((row["policy"], row["merge"]), []).append(row)

    written = []
    for metric, ylabel, suffix in (
        ("mean_divergence", "mean cosine distance to full cache", "divergence"),
        ("memory_ratio", "compressed / full memory", "memory"),
    ):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for (policy, merge), members in sorted(families.items()):
            members = sorted(members, key=lambda r: r["alpha1"] + r["alpha2"])
            xs = [m["alpha1"] + m["alpha2"] for m in members]
            ys = [m[metric] for m in members]
            label = policy if merge == "none" else f"{policy}+{merge}"
            ax.plot(xs, ys, marker="o", markersize=4, label=label)
        ax.set_xlabel("total cache budget (alpha1 + alpha2)")
        ax.set_ylabel(ylabel)
        ax.set_title(f"{ylabel} vs budget")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        path = out_dir / f"{stem}_{suffix}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def render_modality_attention(per_layer: list[dict], path: Path | str) -> Path:
    """Stacked text/image attention mass per layer from one run's summary."""
    layers = [row["layer"] for row in per_layer]
    text = [row["text_mass"] for row in per_layer]
    image = [row["image_mass"] for row in per_layer]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(layers, text, label="text", color="#3465a4")
    ax.bar(layers, image, bottom=text, label="image", color="#f57900")
    ax.set_xlabel("layer")
    ax.set_ylabel("mean attention mass")
    ax.set_title("Attention mass by modality")
    ax.set_xticks(layers)
    ax.legend(fontsize=8)
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
