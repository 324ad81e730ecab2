"""Figure rendering for the report paths; every figure lands next to its CSV/JSON."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 140


def loss_curves_figure(steps_path: str | Path, out_path: str | Path) -> None:
    records = [json.loads(line) for line in Path(steps_path).read_text().splitlines() if line]
    if not records:
        return
    steps = [r["step"] for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    for key in ("l_au", "l_ce_au", "l_kl_au", "l_ce_tar", "l_kl_tar"):
        ax1.plot(steps, [r[key] for r in records], label=key, linewidth=0.9)
    ax1.set_xlabel("step")
    ax1.set_ylabel("component")
    ax1.legend(fontsize=7)
    ax2.plot(steps, [r["total"] for r in records], color="black", linewidth=0.9, label="total")
    ax2.plot(steps, [r["mean_w_au"] for r in records], color="tab:blue", linewidth=0.9, label="mean w_au")
    ax2.set_xlabel("step")
    ax2.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)


def confusion_figure(confusion: np.ndarray, class_names: Sequence[str], out_path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    im = ax.imshow(confusion, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(class_names)), class_names, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(class_names)), class_names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(len(class_names)):
        for j in range(len(class_names)):
            value = confusion[i, j]
            ax.text(j, i, f"{value:.2f}", ha="center", va="center", fontsize=6,
                    color="white" if value > 0.5 else "black")
    fig.colorbar(im, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)


def histogram_figure(counts: np.ndarray, edges: np.ndarray, out_path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    widths = np.diff(edges)
    ax.bar(edges[:-1], counts, width=widths, align="edge", color="tab:blue", edgecolor="white")
    ax.set_xlabel("confidence")
    ax.set_ylabel("samples")
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)


def strata_figure(strata: dict[float, dict[str, float]], out_path: str | Path) -> None:
    fractions = sorted(strata)
    x = np.arange(len(fractions))
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    ax.bar(x - 0.18, [strata[f]["top"] for f in fractions], width=0.36, label="most confident")
    ax.bar(x + 0.18, [strata[f]["bottom"] for f in fractions], width=0.36, label="least confident")
    ax.set_xticks(x, [f"{f:.0%}" for f in fractions])
    ax.set_xlabel("fraction")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)


def heads_figure(heads: dict[str, float], out_path: str | Path) -> None:
    names = list(heads)
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.bar(names, [heads[n] for n in names], color=["tab:orange", "tab:green", "tab:blue"])
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)


def sweep_figure(rows: list[dict], axis_keys: list[str], out_path: str | Path) -> None:
    """Accuracy against the first swept axis, one line per remaining-axis combination."""
    if not rows or not axis_keys:
        return
    primary = axis_keys[0]
    rest = axis_keys[1:]
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in rest), []).append(row)
    for key, members in sorted(groups.items(), key=lambda kv: str(kv[0])):
        members = sorted(members, key=lambda r: r[primary])
        label = ", ".join(f"{k}={v}" for k, v in zip(rest, key)) or None
        ax.plot([m[primary] for m in members], [m["accuracy"] for m in members],
                marker="o", linewidth=1.0, label=label)
    ax.set_xlabel(primary)
    ax.set_ylabel("accuracy")
    if rest:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)
