"""Pixel-level precision/recall/F1 under a distance tolerance, and the
fragmentation-aware connectivity score."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import polyline_pixels

DEFAULT_TAUS = (1.0, 2.0, 5.0, 10.0)


@dataclass(frozen=True)
class PixelSets:
    pred: frozenset
    gt: frozenset

    @classmethod
    def of(cls, pred: Iterable, gt: Iterable) -> "PixelSets":
        return cls(frozenset(map(tuple, pred)), frozenset(map(tuple, gt)))


@dataclass
class MetricReport:
    prf: dict = field(default_factory=dict)  # tau -> (P, R, F1)
    cc: float = 0.0
    per_instance: list = field(default_factory=list)  # (K_i, m_i, alpha_i)

    def f1(self, tau: float) -> float:
        return self.prf[float(tau)][2]

    def as_record(self) -> dict:
        return {
            "prf": {f"{t:g}": {"precision": p, "recall": r, "f1": f} for t, (p, r, f) in self.prf.items()},
            "cc": self.cc,
            "instances": [
                {"K": k, "m": m, "alpha": a} for k, m, a in self.per_instance
            ],
        }

    def table(self) -> str:
        lines = [f"{'tau':>6} {'P':>7} {'R':>7} {'F1':>7}"]
        for t, (p, r, f) in self.prf.items():
            lines.append(f"{t:>6g} {p:7.3f} {r:7.3f} {f:7.3f}")
        lines.append(f"CC = {self.cc:.3f}")
        return "\n".join(lines)


def _nearest_dist(points: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return cKDTree(ref).query(points)[0]


def pixel_prf(ps: PixelSets, tau: float) -> tuple:
    if not ps.gt:
        raise ValueError("ground-truth pixel set is empty")
    if not ps.pred:
        return 0.0, 0.0, 0.0
    pred = np.array(sorted(ps.pred), dtype=np.float64)
    gt = np.array(sorted(ps.gt), dtype=np.float64)
    P = float(np.mean(_nearest_dist(pred, gt) < tau))
    R = float(np.mean(_nearest_dist(gt, pred) < tau))
    F = 0.0 if P + R == 0 else 2 * P * R / (P + R)
    return P, R, F


def match_instances(pred_instances: Sequence, gt_instances: Sequence) -> list:
    """Vote count per GT instance; each prediction votes for the GT instance with
    the smallest mean nearest-pixel distance from its pixels."""
    if not gt_instances:
        raise ValueError("no ground-truth instances")
    trees = [cKDTree(np.array(sorted(g), dtype=np.float64)) for g in gt_instances]
    m = [0] * len(gt_instances)
    for pix in pred_instances:
        if not pix:
            continue
        pts = np.array(sorted(pix), dtype=np.float64)
        means = [float(t.query(pts)[0].mean()) for t in trees]
        m[int(np.argmin(means))] += 1  # argmin keeps the lowest id on ties
    return m


def connectivity(pred_instances: Sequence, gt_instances: Sequence) -> tuple:
    """Returns ``(CC, [(K_i, m_i, alpha_i), ...])``.

    ``gt_instances`` are per-instance pixel sets; alpha_i is each instance's
    share of the summed instance pixel counts.
    """
    sizes = np.array([len(g) for g in gt_instances], dtype=np.float64)
    alpha = sizes / sizes.sum()
    m = match_instances(pred_instances, gt_instances)
    table = [(float(a / mi) if mi else 0.0, int(mi), float(a)) for a, mi in zip(alpha, m)]
    return float(sum(k for k, _, _ in table)), table


def graph_instance_pixels(graph) -> list:
    return [polyline_pixels(pts) for pts in graph.chain_points()]


def gt_instance_pixels(gt) -> list:
    return [polyline_pixels(inst.raw) for inst in gt.instances]


def evaluate(pred, gt, taus: Sequence[float] = DEFAULT_TAUS) -> MetricReport:
    """Score a predicted :class:`CurbGraph` against a :class:`GroundTruth`."""
    if not gt.instances:
        raise ValueError("ground truth has no instances")
    pred_inst = graph_instance_pixels(pred)
    gt_inst = gt_instance_pixels(gt)
    pred_all = set().union(*pred_inst) if pred_inst else set()
    ps = PixelSets.of(pred_all, set().union(*gt_inst))
    rep = MetricReport()
    for t in taus:
        rep.prf[float(t)] = pixel_prf(ps, float(t))
    rep.cc, rep.per_instance = connectivity(pred_inst, gt_inst)
    return rep
