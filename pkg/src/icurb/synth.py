"""Deterministic synthetic curb scenes.

Stands in for aerial tiles and the pretrained segmentation heads: curb layouts
are random smooth polylines, feature channels are derived from the ground
truth with controllable corruption.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .geometry import (
    DensePolyline,
    border_distance,
    densify_polyline,
    distance_transform,
    polyline_pixels,
)


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CurbInstance:
    id: int
    raw: np.ndarray  # (K, 2) annotated vertices
    line: DensePolyline

    @property
    def init_end(self) -> np.ndarray:
        return self.line.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.line.points[-1]

    @property
    def length(self) -> float:
        return self.line.length


@dataclass(frozen=True)
class GroundTruth:
    instances: list
    height: int
    width: int

    @classmethod
    def from_polylines(cls, polylines, height: int, width: int) -> "GroundTruth":
        insts = []
        for i, raw in enumerate(polylines):
            raw = np.asarray(raw, dtype=np.float64).reshape(-1, 2)
            insts.append(CurbInstance(i, raw, densify_polyline(raw, 1.0)))
        return cls(insts, int(height), int(width))

    def pixels(self) -> set:
        out: set = set()
        for inst in self.instances:
            out |= polyline_pixels(inst.raw)
        return out

    def mask(self) -> np.ndarray:
        m = np.zeros((self.height, self.width), dtype=bool)
        for r, c in self.pixels():
            if 0 <= r < self.height and 0 <= c < self.width:
                m[r, c] = True
        return m


@dataclass(frozen=True)
class SceneBundle:
    features: np.ndarray  # (C, H, W) float32
    seg_soft: np.ndarray  # (H, W) float32, stand-in for S
    heatmap: np.ndarray  # (H, W) float32, stand-in for H
    gt: GroundTruth

    @property
    def shape(self) -> tuple:
        return self.seg_soft.shape


@dataclass(frozen=True)
class SynthConfig:
    height: int = 128
    width: int = 128
    n_instances: Optional[int] = None  # fixed count; None draws from the range
    min_instances: int = 2
    max_instances: int = 4
    straight: bool = False
    step: float = 10.0
    max_turn_deg: float = 15.0
    max_heading_dev_deg: float = 75.0
    start_dev_deg: float = 40.0
    min_exit_cos: float = 0.7071
    corner_margin: int = 10
    min_length: float = 40.0
    clearance: float = 10.0
    max_retries: int = 2000
    sigma_f: float = 1.5
    heat_sigma: float = 3.0
    dropout_p: float = 0.1
    blob_rate: float = 0.5
    texture_std: float = 0.1
    heat_false_rate: float = 0.1

    def noiseless(self) -> "SynthConfig":
        return replace(self, dropout_p=0.0, blob_rate=0.0, texture_std=0.0, heat_false_rate=0.0)


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *stream]))


_SIDES = {
    # side: (inward normal)
    "top": (1.0, 0.0),
    "bottom": (-1.0, 0.0),
    "left": (0.0, 1.0),
    "right": (0.0, -1.0),
}


def _start_point(rng, cfg: SynthConfig):
    side = list(_SIDES)[int(rng.integers(4))]
    H, W = cfg.height, cfg.width
    m = cfg.corner_margin
    if side in ("top", "bottom"):
        c = int(rng.integers(m, W - m))
        r = 0 if side == "top" else H - 1
    else:
        r = int(rng.integers(m, H - m))
        c = 0 if side == "left" else W - 1
    return np.array([r, c], dtype=np.float64), np.array(_SIDES[side])


def _clip_step(p, q, H, W):
    """Cut segment p->q where it leaves [0,H-1]x[0,W-1]; returns (point, outward normal)."""
    t_best, normal = 1.0, None
    d = q - p
    for axis, hi in ((0, H - 1), (1, W - 1)):
        if q[axis] < 0:
            t = (0 - p[axis]) / d[axis]
            n = np.zeros(2)
            n[axis] = -1.0
        elif q[axis] > hi:
            t = (hi - p[axis]) / d[axis]
            n = np.zeros(2)
            n[axis] = 1.0
        else:
            continue
        if t < t_best:
            t_best, normal = t, n
    out = p + t_best * d
    out = np.clip(out, [0, 0], [H - 1, W - 1])
    return out, normal


def _random_curb(rng, cfg: SynthConfig) -> Optional[np.ndarray]:
    H, W = cfg.height, cfg.width
    p, normal = _start_point(rng, cfg)
    base = math.atan2(normal[1], normal[0])
    dev = rng.uniform(-1, 1) * math.radians(cfg.start_dev_deg)
    max_dev = math.radians(cfg.max_heading_dev_deg)
    max_turn = 0.0 if cfg.straight else math.radians(cfg.max_turn_deg)
    pts = [p]
    for _ in range(10 * (H + W)):
        heading = base + dev
        q = p + cfg.step * np.array([math.cos(heading), math.sin(heading)])
        if not (0 <= q[0] <= H - 1 and 0 <= q[1] <= W - 1):
            q, out_n = _clip_step(p, q, H, W)
            direction = np.array([math.cos(heading), math.sin(heading)])
            if float(direction @ out_n) < cfg.min_exit_cos:
                return None
            if np.hypot(*(q - p)) > 1e-6:
                pts.append(q)
            break
        pts.append(q)
        p = q
        dev = float(np.clip(dev + rng.uniform(-1, 1) * max_turn, -max_dev, max_dev))
    else:
        return None
    raw = np.array(pts)
    if len(raw) < 2:
        return None
    line = densify_polyline(raw, 1.0)
    if line.length < cfg.min_length:
        return None
    L = line.length
    inner = (line.cum_len >= 2.0) & (line.cum_len <= L - 2.0)
    p_in = line.points[inner]
    edge = np.minimum(np.minimum(p_in[:, 0], p_in[:, 1]), np.minimum(H - 1 - p_in[:, 0], W - 1 - p_in[:, 1]))
    if len(edge) and edge.min() <= 1.0:
        return None
    # first point must be the one nearer the border
    if border_distance(raw[-1], H, W) < border_distance(raw[0], H, W):
        raw = raw[::-1].copy()
    return raw


def _min_distance(a: np.ndarray, tree: cKDTree) -> float:
    return float(tree.query(a)[0].min())


def generate_layout(seed: int, cfg: SynthConfig = SynthConfig()) -> GroundTruth:
    if cfg.height < 64 or cfg.width < 64:
        raise ValueError("synthetic scenes need height and width >= 64")
    rng = _rng(seed, 0)
    if cfg.n_instances is not None:
        n = int(cfg.n_instances)
    else:
        n = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    if n < 1:
        raise ValueError("n_instances must be >= 1")
    # greedy placement restarts from scratch when it stalls
    per_layout = max(1, cfg.max_retries // 10)
    for attempt in range(cfg.max_retries):
        if attempt % per_layout == 0:
            raws: list[np.ndarray] = []
            trees: list[cKDTree] = []
        raw = _random_curb(rng, cfg)
        if raw is None:
            continue
        dense = densify_polyline(raw, 1.0).points
        if any(_min_distance(dense, other) < cfg.clearance for other in trees):
            continue
        raws.append(raw)
        trees.append(cKDTree(dense))
        if len(raws) == n:
            break
    else:
        raise GenerationError(
            f"could not place {n} instances in {cfg.max_retries} attempts (seed={seed})"
        )
    return GroundTruth.from_polylines(raws, cfg.height, cfg.width)


def corrupt_segmentation(
    clean: np.ndarray,
    seed: int,
    dropout_p: float,
    blob_rate: float,
    cell: int = 4,
    radius: float = 5.0,
) -> np.ndarray:
    """Imitate an imperfect segmentation of a clean curb response.

    Ridge pixels (value 1) are grouped into ``cell``-sized tiles; each tile is
    dropped with probability ``dropout_p``, zeroing every pixel within
    ``radius`` whose nearest ridge pixel lies in a dropped tile. False-positive
    Gaussian blobs are then added at ``blob_rate`` per 1000 pixels.
    """
    clean = np.asarray(clean, dtype=np.float64)
    out = clean.copy()
    H, W = clean.shape
    rng_drop = _rng(seed, 11)
    rng_blob = _rng(seed, 12)

    ridge = clean >= 1.0 - 1e-6
    if dropout_p > 0 and ridge.any():
        rows, cols = np.nonzero(ridge)
        tiles = np.unique(np.stack([rows // cell, cols // cell], 1), axis=0)
        dropped = {tuple(t) for t, u in zip(tiles, rng_drop.random(len(tiles))) if u < dropout_p}
        if dropped:
            dist, (ir, ic) = ndimage.distance_transform_edt(~ridge, return_indices=True)
            stride = W // cell + 1
            tile_id = (ir // cell) * stride + ic // cell
            kill = np.isin(tile_id, [tr * stride + tc for tr, tc in dropped])
            out[kill & (dist <= radius)] = 0.0

    if blob_rate > 0:
        n = int(rng_blob.poisson(blob_rate * H * W / 1000.0))
        rr, cc = np.mgrid[0:H, 0:W]
        for _ in range(n):
            r0, c0 = rng_blob.uniform(0, H - 1), rng_blob.uniform(0, W - 1)
            sig = rng_blob.uniform(1.0, 2.0)
            amp = rng_blob.uniform(0.6, 1.0)
            out += amp * np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * sig**2))
    return np.clip(out, 0.0, 1.0)


def _texture(rng, shape, std: float) -> np.ndarray:
    if std <= 0:
        return np.zeros(shape)
    field = ndimage.gaussian_filter(rng.standard_normal(shape), 2.0)
    field /= field.std() + 1e-12
    return std * field


def heatmap_for(gt: GroundTruth, sigma: float) -> np.ndarray:
    H, W = gt.height, gt.width
    rr, cc = np.mgrid[0:H, 0:W]
    heat = np.zeros((H, W))
    for inst in gt.instances:
        r0, c0 = inst.init_end
        heat += np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * sigma**2))
    return heat


def render_scene(gt: GroundTruth, seed: int, cfg: SynthConfig = SynthConfig()) -> SceneBundle:
    H, W = gt.height, gt.width
    dist = distance_transform(gt.mask())
    clean = np.exp(-(dist**2) / (2 * cfg.sigma_f**2))
    corrupted = corrupt_segmentation(clean, seed, cfg.dropout_p, cfg.blob_rate)
    texture = np.clip(clean + _texture(_rng(seed, 13), (H, W), cfg.texture_std), 0.0, 1.0)

    heat = heatmap_for(gt, cfg.heat_sigma)
    if cfg.heat_false_rate > 0:
        rng = _rng(seed, 14)
        rr, cc = np.mgrid[0:H, 0:W]
        for _ in range(int(rng.poisson(cfg.heat_false_rate * H * W / 1000.0))):
            r0, c0 = rng.uniform(0, H - 1), rng.uniform(0, W - 1)
            amp = rng.uniform(0.2, 0.6)
            heat += amp * np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * cfg.heat_sigma**2))
    heat = np.clip(heat, 0.0, 1.0)

    features = np.stack([clean, corrupted, texture]).astype(np.float32)
    return SceneBundle(features, features[1].copy(), heat.astype(np.float32), gt)


def make_scene(seed: int, cfg: SynthConfig = SynthConfig()) -> SceneBundle:
    return render_scene(generate_layout(seed, cfg), seed, cfg)
