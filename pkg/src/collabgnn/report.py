"""Tables, CSV history and matplotlib figures for training and comparisons."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .training import HISTORY_COLUMNS  # noqa: E402

# Strip the matplotlib version stamp so repeated runs give identical files.
_PNG_META = {"Software": None}


def write_history_csv(history: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])


def read_history_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {"epoch": int(r["epoch"]), **{c: float(r[c]) for c in HISTORY_COLUMNS[1:]}} for r in csv.DictReader(fh)
        ]


def _fmt(value, spec: str) -> str:
    return "-" if value is None else format(value, spec)


def format_summary(summary: Sequence[dict]) -> str:
    """Aligned text version of a comparison summary."""
    header = ("variant", "runs", "accuracy", "sd", "logloss", "sd")
    rows = [
        (
            s["variant"],
            str(s["runs"]),
            _fmt(s["accuracy_mean"], ".4f"),
            _fmt(s["accuracy_sd"], ".4f"),
            _fmt(s["logloss_mean"], ".4f"),
            _fmt(s["logloss_sd"], ".4f"),
        )
        for s in summary
    ]
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = []
    for r in [header, *rows]:
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells))
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def plot_history(history: Sequence[dict], path, title: str | None = None) -> None:
    epochs = [r["epoch"] for r in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax_loss.plot(epochs, [r["train_logloss"] for r in history], label="train")
    ax_loss.plot(epochs, [r["val_logloss"] for r in history], label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("log loss")
    ax_loss.legend(frameon=False)
    ax_acc.plot(epochs, [r["val_accuracy"] for r in history], color="C2")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("validation accuracy")
    ax_acc.set_ylim(0, 1.02)
    best = [r["epoch"] for r in history if r.get("best")]
    for ax in (ax_loss, ax_acc):
        for e in best:
            ax.axvline(e, color="0.6", lw=0.8, ls="--")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_comparison(summary: Sequence[dict], path) -> None:
    """Bar chart of mean test accuracy and log loss (error bars: sd over seeds)."""
    ok = [s for s in summary if s["runs"]]
    names = [s["variant"] for s in ok]
    x = range(len(ok))
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(10, 3.8))
    ax_acc.bar(x, [s["accuracy_mean"] for s in ok], yerr=[s["accuracy_sd"] for s in ok], color="C0", capsize=3)
    ax_acc.set_ylabel("test accuracy")
    ax_acc.set_ylim(0, 1.05)
    ax_loss.bar(x, [s["logloss_mean"] for s in ok], yerr=[s["logloss_sd"] for s in ok], color="C1", capsize=3)
    ax_loss.set_ylabel("test log loss")
    for ax in (ax_acc, ax_loss):
        ax.set_xticks(list(x))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def write_comparison(result: dict, out_dir) -> dict[str, Path]:
    import json

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out_dir / "comparison.json",
        "text": out_dir / "comparison.txt",
        "figure": out_dir / "comparison.png",
    }
    paths["json"].write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["text"].write_text(format_summary(result["summary"]), encoding="utf-8")
    plot_comparison(result["summary"], paths["figure"])
    return paths
