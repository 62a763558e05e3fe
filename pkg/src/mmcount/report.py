"""Markdown comparison tables and static PNG plots from MetricsReport files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import read_grid  # noqa: E402
from .metrics import MetricsReport, format_value  # noqa: E402


def markdown_table(reports: list[MetricsReport]) -> str:
    levels = sorted(set().union(*(r.game.keys() for r in reports)))
    head = ["Model", "Input"] + [f"GAME{lv}" for lv in levels]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in reports:
        cells = [r.model, r.input_mode or "-"]
        cells += [format_value(r.game[lv]) if lv in r.game else "-" for lv in levels]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _label(r: MetricsReport, i: int) -> str:
    return f"{r.model}-{r.input_mode or i}".replace("+", "_").replace("/", "_")


def plot_loss_curves(reports, path) -> bool:
    runs = [(r, r.extra.get("history")) for r in reports if r.extra.get("history")]
    if not runs:
        return False
    fig, (ax_loss, ax_mae) = plt.subplots(1, 2, figsize=(10, 4))
    for i, (r, hist) in enumerate(runs):
        epochs = [h["epoch"] for h in hist]
        ax_loss.plot(epochs, [h.get("train_loss", np.nan) for h in hist], label=_label(r, i))
        ax_mae.plot(epochs, [h.get("val_mae", np.nan) for h in hist], label=_label(r, i))
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train density MSE")
    ax_loss.set_yscale("log")
    ax_mae.set_xlabel("epoch")
    ax_mae.set_ylabel("validation MAE")
    ax_mae.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return True


def plot_density_pairs(report: MetricsReport, base_dir: Path, out_dir: Path, label: str, k: int):
    written = []
    for entry in report.extra.get("maps", [])[:k]:
        pred = read_grid(base_dir / entry["pred"]).values
        gt = read_grid(base_dir / entry["gt"]).values
        vmax = max(float(gt.max()), float(pred.max()), 1e-12)
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
        for ax, grid, title in ((axes[0], gt, "ground truth"), (axes[1], pred, "predicted")):
            ax.imshow(grid, cmap="jet", vmin=0, vmax=vmax)
            ax.set_title(f"{title}: {grid.sum():.1f}")
            ax.axis("off")
        fig.suptitle(entry["id"])
        fig.tight_layout()
        path = out_dir / f"density_{label}_{entry['id']}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written


def write_report(metrics_files, out_dir, k_maps: int = 4) -> Path:
    """Load every metrics JSON (raises FormatError on a malformed one) and render outputs."""
    out_dir = Path(out_dir)
    reports = [(Path(p), MetricsReport.from_json(p)) for p in metrics_files]
    out_dir.mkdir(parents=True, exist_ok=True)
    table = markdown_table([r for _, r in reports])
    lines = ["# Counting results", "", table]
    if plot_loss_curves([r for _, r in reports], out_dir / "loss_curves.png"):
        lines += ["![loss curves](loss_curves.png)", ""]
    for i, (path, r) in enumerate(reports):
        for img in plot_density_pairs(r, path.parent, out_dir, _label(r, i), k_maps):
            lines += [f"![{img.stem}]({img.name})", ""]
    md = out_dir / "report.md"
    md.write_text("\n".join(lines))
    return md
