"""Matplotlib renderers for the CLI's figures.

PNG output is kept byte-stable by dropping the ``Software`` metadata key and
passing the run manifest as the description.
"""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .benchgen import DETECTED, INVALID, NOT_DETECTED, DetectionMatrix  # noqa: E402

STATUS_CODE = {INVALID: 0, NOT_DETECTED: 1, DETECTED: 2}
STATUS_COLORS = ["#d9d9d9", "#ffffff", "#1f4e79"]


def _save(fig, path, manifest: dict | None = None) -> None:
    meta = {"Software": None}
    if manifest is not None:
        meta["Description"] = json.dumps(manifest, sort_keys=True)
    fig.savefig(path, format="png", dpi=100, metadata=meta)
    plt.close(fig)


def timing_figure(rows: list[dict], path, title: str = "", manifest: dict | None = None) -> None:
    """Bar per timing type (mode) with the 95% interval as an error bar, one panel per op."""
    ops = []
    for r in rows:
        if r["op"] not in ops:
            ops.append(r["op"])
    fig, axes = plt.subplots(len(ops), 1, figsize=(10, 2.8 * len(ops)), squeeze=False)
    for ax, op in zip(axes[:, 0], ops):
        sel = [r for r in rows if r["op"] == op]
        x = range(len(sel))
        modes = [r["mode"] for r in sel]
        err = [[r["mode"] - r["p95_low"] for r in sel], [r["p95_high"] - r["mode"] for r in sel]]
        ax.bar(x, modes, yerr=err, color="#4a7ab5", capsize=2)
        ax.set_xticks(list(x))
        ax.set_xticklabels([r["label"] for r in sel], rotation=60, ha="right", fontsize=7)
        ax.set_ylabel(f"{op} (cycles)")
    if title:
        axes[0, 0].set_title(title)
    fig.tight_layout()
    _save(fig, path, manifest)


def matrix_figure(matrix: DetectionMatrix, path, manifest: dict | None = None) -> None:
    """Triple x configuration grid: dark = detected, white = not detected, grey = invalid."""
    triples = matrix.triples()
    labels = matrix.labels()
    grid = [[STATUS_CODE[matrix.cells[(t, lab)].status] if (t, lab) in matrix.cells else 0
             for lab in labels] for t in triples]
    height = min(60.0, max(3.0, 0.12 * len(triples) + 1.5))
    fig, ax = plt.subplots(figsize=(7, height))
    ax.imshow(grid or [[0]], aspect="auto", interpolation="nearest",
              cmap=ListedColormap(STATUS_COLORS), vmin=0, vmax=2)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=75, ha="right", fontsize=7)
    if len(triples) <= 60:
        ax.set_yticks(range(len(triples)))
        ax.set_yticklabels([f"#{t}" for t in triples], fontsize=6)
    ax.set_ylabel("triple")
    ax.set_title(f"{matrix.target}: detection matrix")
    fig.tight_layout()
    _save(fig, path, manifest)


def ctvs_figure(report, path, manifest: dict | None = None) -> None:
    names = report.targets
    vals = [report.ctvs[n].value for n in names]
    fig, ax = plt.subplots(figsize=(max(3.0, 1.2 * len(names) + 1), 3))
    ax.bar(names, vals, color="#4a7ab5")
    ax.set_ylim(0, 1)
    ax.set_ylabel("CTVS")
    for i, v in enumerate(vals):
        ax.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    _save(fig, path, manifest)


def sweep_figure(rows: list[dict], path, manifest: dict | None = None) -> None:
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.bar(range(len(rows)), [r["eviction_rate"] for r in rows], color="#4a7ab5")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels([r["params"] for r in rows], rotation=75, ha="right", fontsize=7)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("eviction rate")
    ax.set_xlabel("addresses/accesses/window/rounds")
    fig.tight_layout()
    _save(fig, path, manifest)
