"""Initial-vertex candidates from the segmentation map and the start heatmap."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import local_maxima, round_half_up, skeleton_segments, skeletonize_to_border


@dataclass(frozen=True)
class CandidateConfig:
    seg_threshold: float = 0.5
    min_skel_len: float = 15.0
    nms_radius: int = 5
    p_add: float = 0.7
    p_keep: float = 0.3
    merge_radius: float = 10.0


@dataclass
class CandidateSet:
    points: list = field(default_factory=list)  # (row, col)
    scores: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)


def sample(raster: np.ndarray, p) -> float:
    H, W = raster.shape
    r, c = round_half_up(p)
    r = min(max(int(r), 0), H - 1)
    c = min(max(int(c), 0), W - 1)
    return float(raster[r, c])


def candidates_from_segmentation(
    S: np.ndarray, cfg: CandidateConfig = CandidateConfig(), H: Optional[np.ndarray] = None
) -> CandidateSet:
    """One endpoint per surviving skeleton segment.

    With a heatmap the endpoint scoring higher in ``H`` wins, otherwise the
    lexicographically smaller one.
    """
    S = np.asarray(S, dtype=np.float64)
    skel = skeletonize_to_border(S >= cfg.seg_threshold)
    out = CandidateSet()
    for _, (a, b) in skeleton_segments(skel, cfg.min_skel_len):
        if H is not None:
            ha, hb = sample(H, a), sample(H, b)
            pick = a if (ha, tuple(-x for x in a)) >= (hb, tuple(-x for x in b)) else b
        else:
            pick = min(a, b)
        out.points.append((float(pick[0]), float(pick[1])))
        out.scores.append(sample(H, pick) if H is not None else 0.0)
    return out


def candidates_from_heatmap(H: np.ndarray, cfg: CandidateConfig = CandidateConfig()) -> CandidateSet:
    H = np.asarray(H, dtype=np.float64)
    pts = local_maxima(H, cfg.nms_radius, cfg.p_add)
    return CandidateSet([(float(r), float(c)) for r, c in pts], [float(H[r, c]) for r, c in pts])


def merge_candidates(
    Q: CandidateSet, Qp: CandidateSet, H: np.ndarray, cfg: CandidateConfig = CandidateConfig()
) -> CandidateSet:
    """Drop low-heat skeleton candidates, add heatmap maxima, then suppress
    duplicates greedily in order of descending heat."""
    H = np.asarray(H, dtype=np.float64)
    pool = [(sample(H, p), tuple(p)) for p in Q.points if sample(H, p) >= cfg.p_keep]
    pool += [(sample(H, p), tuple(p)) for p in Qp.points]
    # canonical order: heat descending, then (row, col)
    pool.sort(key=lambda t: (-t[0], t[1]))
    kept = CandidateSet()
    r2 = cfg.merge_radius**2
    for score, p in pool:
        if any((p[0] - k[0]) ** 2 + (p[1] - k[1]) ** 2 < r2 for k in kept.points):
            continue
        kept.points.append(p)
        kept.scores.append(score)
    return kept


def initial_candidates(S: np.ndarray, H: np.ndarray, cfg: CandidateConfig = CandidateConfig()) -> CandidateSet:
    return merge_candidates(candidates_from_segmentation(S, cfg, H), candidates_from_heatmap(H, cfg), H, cfg)
