"""Figures written to files: SVG overlays of graphs on scenes, metric and
training-curve plots. Output is byte-stable for identical inputs."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

GT_COLOR = "#00d7ff"  # cyan
EDGE_COLOR = "#ff8c00"  # orange
VERTEX_COLOR = "#ffd700"  # yellow
CAND_COLOR = "#ff3070"

_RC = {"svg.hashsalt": "icurb", "svg.fonttype": "none", "font.size": 8}


def _save(fig, path) -> None:
    path = Path(path)
    fmt = path.suffix.lstrip(".").lower() or "svg"
    meta = {"Date": None} if fmt == "svg" else {}
    if fmt == "pdf":
        meta = {"CreationDate": None, "ModDate": None}
    fig.savefig(path, format=fmt, metadata=meta)
    plt.close(fig)


def overlay_figure(background: Optional[np.ndarray], gt=None, graph=None, title: str = "", show_candidates=True):
    """GT polylines in cyan, predicted edges in orange, vertices in yellow.

    SVG element ids: ``gt-curb-<i>``, ``pred-edges``, ``pred-vertices``,
    ``candidates``.
    """
    with plt.rc_context(_RC):
        H, W = (background.shape if background is not None else (gt.height, gt.width))
        fig, ax = plt.subplots(figsize=(4, 4 * H / W))
        if background is not None:
            ax.imshow(background, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
        ax.set_xlim(-0.5, W - 0.5)
        ax.set_ylim(H - 0.5, -0.5)
        ax.set_axis_off()
        if gt is not None:
            for inst in gt.instances:
                r = inst.raw
                ax.plot(r[:, 1], r[:, 0], color=GT_COLOR, lw=2.0, alpha=0.8, gid=f"gt-curb-{inst.id}")
        if graph is not None:
            pos = {vid: p for vid, p, _ in graph.vertices}
            segs = [[pos[a][::-1], pos[b][::-1]] for a, b in graph.edges]
            if segs:
                ax.add_collection(LineCollection(segs, colors=EDGE_COLOR, linewidths=1.2, gid="pred-edges"))
            if graph.vertices:
                P = np.array([p for _, p, _ in graph.vertices])
                ax.scatter(P[:, 1], P[:, 0], s=6, c=VERTEX_COLOR, zorder=3, linewidths=0, gid="pred-vertices")
            if show_candidates and graph.candidates:
                C = np.array([c[:2] for c in graph.candidates])
                ax.scatter(C[:, 1], C[:, 0], s=30, marker="x", c=CAND_COLOR, zorder=4, gid="candidates")
        if title:
            ax.set_title(title)
        fig.tight_layout(pad=0.1)
    return fig


def render_overlay(path, background, gt=None, graph=None, title: str = "") -> None:
    with plt.rc_context(_RC):
        _save(overlay_figure(background, gt, graph, title), path)


def render_metrics(path, report, title: str = "") -> None:
    """P/R/F1 against the distance tolerance, CC in the title."""
    taus = sorted(report.prf)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        for k, (name, mk) in enumerate((("precision", "o"), ("recall", "s"), ("F1", "^"))):
            ax.plot(taus, [report.prf[t][k] for t in taus], marker=mk, label=name, gid=f"metric-{name.lower()}")
        ax.set_xscale("log")
        ax.set_xticks(taus, [f"{t:g}" for t in taus])
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("tolerance (px)")
        ax.legend(frameon=False)
        ax.set_title(title or f"CC = {report.cc:.3f}")
        fig.tight_layout()
        _save(fig, path)


def render_training(path, records: Sequence[dict], tau: float = 2.0) -> None:
    """Loss per training call and held-out F1 / CC per evaluation."""
    train = [r for r in records if "coord_l1" in r]
    evals = [r for r in records if r.get("phase") == "eval"]
    with plt.rc_context(_RC):
        fig, (a0, a1) = plt.subplots(1, 2, figsize=(8, 3))
        if train:
            x = np.arange(len(train))
            a0.plot(x, [r["coord_l1"] for r in train], lw=0.6, label="coord L1", gid="loss-coord")
            a0.plot(x, [r["stop_bce"] for r in train], lw=0.6, label="stop BCE", gid="loss-stop")
            a0.set_xlabel("training call")
            a0.legend(frameon=False)
        if evals:
            x = [r["image"] for r in evals]
            a1.plot(x, [r[f"f1_{tau:g}"] for r in evals], marker="o", label=f"F1({tau:g})", gid="eval-f1")
            a1.plot(x, [r["cc"] for r in evals], marker="s", label="CC", gid="eval-cc")
            a1.set_ylim(0, 1.02)
            a1.set_xlabel("images trained")
            a1.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
