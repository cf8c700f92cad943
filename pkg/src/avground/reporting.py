"""Report writers: JSON payloads, CSV summaries, and rendered figures.

Every evaluation emits the same bundle: a JSON report with full detail, a
flat CSV of named scalars for spreadsheet use, optional curve CSVs, and PNG
figures rendered headlessly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402


def write_json(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_metrics_csv(path: str | Path, metrics: dict) -> Path:
    rows = [[name, value] for name, value in sorted(metrics.items())
            if isinstance(value, (int, float))]
    return write_csv(path, ["metric", "value"], rows)


def pr_curve_figure(path: str | Path, recall, precision, ap: float) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4))
    order = np.argsort(recall, kind="stable")
    ax.plot(np.asarray(recall)[order], np.asarray(precision)[order], marker=".", lw=1.5)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"detection PR (AP = {ap:.3f})")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def success_curve_figure(path: str | Path, thresholds, success, label: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(thresholds, success, marker=".", lw=1.5)
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("success ratio")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(label)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def loss_curve_figure(path: str | Path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = [r["step"] for r in rows]
    keys = sorted({k for r in rows for k in r} - {"step", "epoch"})
    for key in keys:
        ax.plot(steps, [r.get(key, float("nan")) for r in rows], lw=1.2, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
