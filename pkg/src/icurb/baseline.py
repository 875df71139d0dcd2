"""Segmentation-only baseline: threshold, thin, and read skeleton chains as curbs."""

from __future__ import annotations

import numpy as np

from .candidates import CandidateConfig
from .env import CurbGraph
from .geometry import skeleton_segments, skeletonize_to_border


def naive_graph(S: np.ndarray, cfg: CandidateConfig = CandidateConfig()) -> CurbGraph:
    skel = skeletonize_to_border(np.asarray(S, dtype=np.float64) >= cfg.seg_threshold)
    graph = CurbGraph()
    for chain, (a, b) in skeleton_segments(skel, cfg.min_skel_len):
        if b < a:  # start from the lexicographically smaller end
            chain = chain[::-1]
        ids = [graph.add_vertex(p) for p in chain]
        graph.edges.extend(zip(ids[:-1], ids[1:]))
        graph.set_stop(ids[-1])
        graph.instances.append(ids)
    return graph
