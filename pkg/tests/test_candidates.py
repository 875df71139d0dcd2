import math
from dataclasses import replace

import numpy as np
import pytest

from icurb.baseline import naive_graph
from icurb.candidates import (
    CandidateConfig,
    CandidateSet,
    candidates_from_heatmap,
    candidates_from_segmentation,
    initial_candidates,
    merge_candidates,
)
from icurb.env import CurbGraph, EnvConfig, Mode, run_image
from icurb.metrics import evaluate
from icurb.policy import make_expert_policy
from icurb.synth import GroundTruth, SynthConfig, generate_layout, make_scene, render_scene

NOISELESS = SynthConfig().noiseless()
CFG = CandidateConfig()


def straight_scene(seed=0):
    cfg = replace(NOISELESS, n_instances=1, straight=True)
    return make_scene(seed, cfg)


def bump(H, W, center, peak, sigma=2.0):
    r, c = np.mgrid[:H, :W]
    return peak * np.exp(-((r - center[0]) ** 2 + (c - center[1]) ** 2) / (2 * sigma**2))


# -- skeleton candidates ------------------------------------------------------


def test_segmentation_single_straight_curb():
    for seed in range(5):
        sc = straight_scene(seed)
        cs = candidates_from_segmentation(sc.seg_soft, CFG)
        assert len(cs) == 1
        inst = sc.gt.instances[0]
        assert min(math.dist(cs.points[0], e) for e in (inst.init_end, inst.end)) <= 2


def test_segmentation_prefers_hot_endpoint():
    for seed in range(5):
        sc = straight_scene(seed)
        cs = candidates_from_segmentation(sc.seg_soft, CFG, sc.heatmap)
        assert math.dist(cs.points[0], sc.gt.instances[0].init_end) <= 2


def test_segmentation_empty_and_speck():
    assert len(candidates_from_segmentation(np.zeros((64, 64)), CFG)) == 0
    S = np.zeros((64, 64))
    S[30, 30:35] = 1.0  # 5-px speck
    assert len(candidates_from_segmentation(S, replace(CFG, min_skel_len=15))) == 0


# -- heatmap candidates --------------------------------------------------------


def test_heatmap_candidates_noiseless():
    n = 0
    for seed in range(20):
        sc = make_scene(seed, NOISELESS)
        if len(sc.gt.instances) != 3:
            continue
        cs = candidates_from_heatmap(sc.heatmap, CFG)
        assert len(cs) == 3
        for inst in sc.gt.instances:
            assert min(math.dist(p, inst.init_end) for p in cs.points) <= 1
        n += 1
    assert n > 0


def test_heatmap_threshold_edge():
    assert len(candidates_from_heatmap(np.full((40, 40), 0.1), CFG)) == 0
    cs = candidates_from_heatmap(bump(40, 40, (20, 20), 0.71), CFG)
    assert cs.points == [(20.0, 20.0)] and cs.scores[0] == pytest.approx(0.71)


# -- merging -----------------------------------------------------------------


def test_merge_examples():
    H = np.zeros((64, 64))
    H[10, 10] = 0.1
    out = merge_candidates(CandidateSet([(10.0, 10.0)], [0.1]), CandidateSet(), H, CFG)
    assert len(out) == 0

    H = bump(64, 64, (20, 20), 0.9) + bump(64, 64, (20, 24), 0.5)
    Q = CandidateSet([(20.0, 24.0)], [0.0])
    Qp = CandidateSet([(20.0, 20.0)], [0.9])
    out = merge_candidates(Q, Qp, H, CFG)
    assert out.points == [(20.0, 20.0)]

    H = np.full((64, 64), 0.5)
    Q = CandidateSet([(5.0, 5.0), (50.0, 50.0)], [0, 0])
    Qp = CandidateSet([(5.0, 50.0)], [0.5])
    out = merge_candidates(Q, Qp, H, CFG)
    assert sorted(out.points) == [(5.0, 5.0), (5.0, 50.0), (50.0, 50.0)]


def test_merge_order_invariant_and_spaced():
    rng = np.random.default_rng(0)
    for _ in range(50):
        H = rng.random((48, 48))
        pts = [tuple(map(float, p)) for p in rng.integers(0, 48, (12, 2))]
        a, b = CandidateSet(pts[:6], [0] * 6), CandidateSet(pts[6:], [0] * 6)
        out = merge_candidates(a, b, H, CFG)
        perm = rng.permutation(6)
        a2 = CandidateSet([a.points[i] for i in perm], [0] * 6)
        b2 = CandidateSet([b.points[i] for i in perm[::-1]], [0] * 6)
        assert merge_candidates(a2, b2, H, CFG).points == out.points
        for i, p in enumerate(out.points):
            assert 0 <= out.scores[i] <= 1
            for q in out.points[i + 1 :]:
                assert math.dist(p, q) >= CFG.merge_radius


def test_initial_candidates_cover_noiseless_starts():
    for seed in range(20):
        sc = make_scene(seed, NOISELESS)
        cs = initial_candidates(sc.seg_soft, sc.heatmap, CFG)
        for inst in sc.gt.instances:
            assert min(math.dist(p, inst.init_end) for p in cs.points) <= 3
        for p in cs.points:
            assert any(
                np.min(np.hypot(*(inst.line.points - p).T)) <= 20 for inst in sc.gt.instances
            )


# -- naive baseline ------------------------------------------------------------


def test_naive_clean_single_curb():
    for seed in range(5):
        sc = straight_scene(seed)
        g = naive_graph(sc.seg_soft, CFG)
        assert len(g.instances) == 1
        assert evaluate(g, sc.gt).f1(2) >= 0.95


def test_naive_gap_halves_k():
    gt = GroundTruth.from_polylines([[(64, 0), (64, 127)]], 128, 128)
    sc = render_scene(gt, 0, NOISELESS)
    S = sc.seg_soft.copy()
    S[:, 60:68] = 0.0  # dropout gap across the curb
    g = naive_graph(S, CFG)
    assert len(g.instances) == 2
    rep = evaluate(g, gt)
    assert rep.per_instance[0][1] == 2
    assert rep.cc == pytest.approx(0.5)


def test_naive_empty():
    gt = generate_layout(0)
    g = naive_graph(np.zeros((128, 128)), CFG)
    assert g == CurbGraph()
    assert evaluate(g, gt).cc == 0.0


def test_naive_chain_starts_at_smaller_endpoint():
    for seed in range(5):
        g = naive_graph(make_scene(seed, NOISELESS).seg_soft, CFG)
        for pts in g.chain_points():
            assert tuple(pts[0]) <= tuple(pts[-1])
            steps = np.abs(np.diff(pts, axis=0)).max(axis=1)
            assert steps.max() <= 1  # 8-connected pixel chain


def test_naive_worse_connectivity_than_expert_on_gaps():
    cfg = replace(SynthConfig(), dropout_p=0.3)
    naive, expert = [], []
    for seed in range(10):
        sc = make_scene(seed, cfg)
        env = EnvConfig.for_image(128, 128)
        pol = make_expert_policy(sc.gt, env.d, env.oracle)
        g, _ = run_image(sc, pol, [i.init_end for i in sc.gt.instances], Mode.TEST, env)
        expert.append(evaluate(g, sc.gt).cc)
        naive.append(evaluate(naive_graph(sc.seg_soft, CFG), sc.gt).cc)
    assert np.mean(naive) < np.mean(expert)
