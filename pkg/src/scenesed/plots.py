"""Static plot emission for run and grid directories.

Everything renders through the Agg backend with fixed sizes, so regenerating
plots from identical reports yields identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigError

DPI = 110


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _plot_loss_curves(csv_path: Path, out_path: Path, title: str):
    rows = _read_csv(csv_path)
    by_seed: dict[str, list[tuple[int, float]]] = {}
    for row in rows:
        by_seed.setdefault(row["seed"], []).append(
            (int(row["epoch"]), float(row["total_loss"])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for seed in sorted(by_seed):
        pts = sorted(by_seed[seed])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"seed {seed}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)


def _plot_confusion(csv_path: Path, out_path: Path, title: str):
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    values = [[float(v) for v in row[1:]] for row in rows[1:]]
    fig, ax = plt.subplots(figsize=(5, 4.4))
    im = ax.imshow(values, vmin=0, vmax=100, cmap="Blues")
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("reference")
    for i, row in enumerate(values):
        for j, v in enumerate(row):
            ax.text(j, i, f"{v:.1f}", ha="center", va="center", fontsize=8,
                    color="white" if v > 50 else "black")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="recall (%)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)


def _plot_per_event(csv_path: Path, out_path: Path, method: str):
    rows = [r for r in _read_csv(csv_path) if r["method"] == method]
    rows.sort(key=lambda r: int(r["event"]))
    events = [int(r["event"]) for r in rows]
    means = [float(r["mean_f"]) for r in rows]
    stds = [float(r["std_f"]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(events) + 2), 3.6))
    ax.bar(events, means, yerr=stds, capsize=2)
    ax.set_xlabel("event class")
    ax.set_ylabel("frame F-score")
    ax.set_ylim(0, 1)
    ax.set_title(f"per-event F ({method})")
    ax.set_xticks(events)
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)


def emit_plots(in_dir) -> list[Path]:
    """Render plots for a run directory or a grid directory."""
    in_dir = Path(in_dir)
    if not in_dir.exists():
        raise ConfigError(f"no such report directory: {in_dir}")
    plots_dir = in_dir / "plots"
    written: list[Path] = []

    def loss(csv_path: Path, method: str):
        out = plots_dir / f"loss_{method}.png"
        _plot_loss_curves(csv_path, out, f"training loss ({method})")
        written.append(out)

    def confusion(csv_path: Path, method: str):
        out = plots_dir / f"confusion_{method}.png"
        _plot_confusion(csv_path, out, f"scene confusion ({method})")
        written.append(out)

    def per_event(csv_path: Path, method: str):
        out = plots_dir / f"per_event_{method}.png"
        _plot_per_event(csv_path, out, method)
        written.append(out)

    if (in_dir / "summary.csv").exists():  # grid layout
        plots_dir.mkdir(exist_ok=True)
        methods = [row["method"] for row in _read_csv(in_dir / "summary.csv")
                   if row["status"] == "ok"]
        for method in methods:
            run_dir = in_dir / method
            if (run_dir / "loss_curves.csv").exists():
                loss(run_dir / "loss_curves.csv", method)
            conf = in_dir / f"confusion_{method}.csv"
            if conf.exists():
                confusion(conf, method)
            if (in_dir / "per_event.csv").exists():
                per_event(in_dir / "per_event.csv", method)
    elif (in_dir / "report.csv").exists():  # single-run layout
        plots_dir.mkdir(exist_ok=True)
        rows = _read_csv(in_dir / "report.csv")
        method = rows[0]["method"] if rows else "run"
        loss(in_dir / "loss_curves.csv", method)
        confusion(in_dir / "confusion.csv", method)
        per_event(in_dir / "per_event.csv", method)
    else:
        raise ConfigError(f"{in_dir}: neither summary.csv nor report.csv found")
    return written
