"""Graph-growing environment.

One image is processed as a sequence of episodes, one per initial vertex, all
sharing a single history raster. The update mode decides what gets committed
into the history:

* ``Mode.TEST`` commits every prediction and emits no samples.
* ``Mode.RESTRICTED`` snaps predictions that stray beyond the snap threshold
  back onto the expert label.
* ``Mode.FREE`` commits raw predictions and only labels them.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .actions import PolicyOutput, scale_offset, unscale_offset
from .geometry import border_distance, crop_window, rasterize_segment, round_half_up
from .oracle import InstanceBinding, OracleConfig, bind_instance, dynamic_label
from .synth import GroundTruth, SceneBundle

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    TEST = "test"
    RESTRICTED = "restricted"
    FREE = "free"


def scaled_threshold(full_scale_px: float, side: int) -> float:
    """Thresholds are quoted for 1000 px tiles; shrink proportionally, floor 2 px."""
    return max(2.0, full_scale_px * side / 1000.0)


def default_crop(side: int) -> int:
    d = min(64, side // 4)
    return d - d % 2


@dataclass(frozen=True)
class EnvConfig:
    d: int = 32
    snap: float = 2.0
    kill_stray: float = 3.84
    max_steps: int = 128
    stop_threshold: float = 0.5
    border: float = 1.0
    oracle: OracleConfig = field(default_factory=lambda: OracleConfig(stray_stop=2.0))

    @classmethod
    def for_image(
        cls,
        height: int,
        width: int,
        d: Optional[int] = None,
        snap_full: float = 15.0,
        kill_full: float = 30.0,
        max_steps: Optional[int] = None,
        **oracle_kw,
    ) -> "EnvConfig":
        side = max(height, width)
        d = default_crop(side) if d is None else int(d)
        snap = scaled_threshold(snap_full, side)
        oracle = OracleConfig(stray_stop=snap, **oracle_kw)
        if max_steps is None:
            max_steps = int(4 * (height + width) / oracle.dexp(d))
        return cls(
            d=d,
            snap=snap,
            kill_stray=scaled_threshold(kill_full, side),
            max_steps=max_steps,
            oracle=oracle,
        )


@dataclass
class Observation:
    patch: np.ndarray  # (C + 1, d, d): features then history
    cur_norm: tuple
    prev_norm: tuple
    cur: tuple  # absolute position, for oracle-backed policies


@dataclass
class TrainingSample:
    obs: Observation
    coord_label: np.ndarray  # scaled offset in [-1, 1]^2
    stop_label: int


@dataclass
class CurbGraph:
    vertices: list = field(default_factory=list)  # (id, (row, col), stop)
    edges: list = field(default_factory=list)  # (id, id)
    instances: list = field(default_factory=list)  # ordered id chains
    candidates: list = field(default_factory=list)  # optional (row, col, score)

    def add_vertex(self, p, stop: bool = False) -> int:
        vid = len(self.vertices)
        self.vertices.append((vid, (float(p[0]), float(p[1])), bool(stop)))
        return vid

    def set_stop(self, vid: int, stop: bool = True) -> None:
        i, p, _ = self.vertices[vid]
        self.vertices[vid] = (i, p, bool(stop))

    def chain_points(self) -> list:
        pos = {vid: p for vid, p, _ in self.vertices}
        return [np.array([pos[v] for v in chain], dtype=np.float64) for chain in self.instances]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CurbGraph):
            return NotImplemented
        return (
            self.vertices == other.vertices
            and [tuple(e) for e in self.edges] == [tuple(e) for e in other.edges]
            and [list(c) for c in self.instances] == [list(c) for c in other.instances]
        )


@dataclass
class EnvState:
    features: np.ndarray
    history: np.ndarray
    cur: np.ndarray
    prev: np.ndarray
    binding: Optional[InstanceBinding]
    mode: Mode
    graph: CurbGraph
    chain: list
    steps: int = 0
    done: bool = False
    _obs: Optional[Observation] = None

    @property
    def shape(self) -> tuple:
        return self.history.shape


def _mark(history: np.ndarray, pixels) -> None:
    H, W = history.shape
    for r, c in pixels:
        if 0 <= r < H and 0 <= c < W:
            history[r, c] = 1


def reset(
    features: np.ndarray,
    history: np.ndarray,
    q,
    gt: Optional[GroundTruth],
    mode: Mode,
    cfg: EnvConfig,
    graph: Optional[CurbGraph] = None,
) -> EnvState:
    """Start an episode at ``q``. ``history`` is shared and mutated in place.

    Raises :class:`~icurb.oracle.UnbindableCandidate` in training modes when
    ``q`` cannot be bound to a ground-truth instance.
    """
    mode = Mode(mode)
    q = np.asarray(q, dtype=np.float64)
    binding = None
    if mode is not Mode.TEST:
        if gt is None:
            raise ValueError(f"{mode.value} mode needs ground truth")
        binding = bind_instance(gt, q, cfg.oracle.bind_radius)
    graph = graph if graph is not None else CurbGraph()
    vid = graph.add_vertex(q)
    r, c = round_half_up(q)
    _mark(history, [(int(r), int(c))])
    return EnvState(features, history, q.copy(), q.copy(), binding, mode, graph, [vid])


def observe(s: EnvState, d: int) -> Observation:
    if s.done:
        raise RuntimeError("observe() on a finished episode")
    H, W = s.shape
    feat = crop_window(s.features, s.cur, d)
    hist = crop_window(s.history, s.cur, d)
    patch = np.concatenate([feat, hist[None].astype(feat.dtype)])
    norm = np.array([max(H - 1, 1), max(W - 1, 1)], dtype=np.float64)
    obs = Observation(
        patch,
        tuple(s.cur / norm),
        tuple(s.prev / norm),
        (float(s.cur[0]), float(s.cur[1])),
    )
    s._obs = obs
    return obs


def _commit(s: EnvState, p: np.ndarray) -> None:
    vid = s.graph.add_vertex(p)
    s.graph.edges.append((s.chain[-1], vid))
    s.chain.append(vid)
    _mark(s.history, rasterize_segment(s.cur, p))
    s.prev, s.cur = s.cur, p.copy()
    s.steps += 1


def step(s: EnvState, out: PolicyOutput, d: int, cfg: EnvConfig):
    """Advance one vertex. Returns ``(sample or None, done)``."""
    if s.done:
        raise RuntimeError("step() on a finished episode")
    H, W = s.shape
    obs = s._obs if s._obs is not None else observe(s, d)
    s._obs = None
    cur = s.cur
    pred = cur + unscale_offset(out.delta, d)
    pred = np.clip(pred, [0.0, 0.0], [H - 1.0, W - 1.0])
    wants_stop = out.stop_prob > cfg.stop_threshold
    sample = None

    if s.mode is Mode.TEST:
        _commit(s, pred)
        done = wants_stop or border_distance(pred, H, W) <= cfg.border
    else:
        lr = dynamic_label(s.binding, pred, cur, d, cfg.oracle)
        sample = TrainingSample(obs, scale_offset(lr.coord_label - cur, d), int(lr.stop_label))
        s.binding.arc_pos = lr.new_arc_pos
        if s.mode is Mode.RESTRICTED:
            _commit(s, pred if lr.stray_dist < cfg.snap else np.asarray(lr.coord_label))
            done = bool(lr.stop_label)
        else:
            _commit(s, pred)
            done = wants_stop or (lr.stop_label == 1 and lr.stray_dist > cfg.kill_stray)

    done = done or s.steps >= cfg.max_steps
    if done:
        s.done = True
        s.graph.set_stop(s.chain[-1])
    return sample, done


def run_image(
    scene: SceneBundle,
    policy,
    Q: Sequence,
    mode: Mode,
    cfg: EnvConfig,
    history: Optional[np.ndarray] = None,
    skipped: Optional[list] = None,
):
    """Grow one chain per initial vertex in ``Q``; returns ``(graph, samples)``.

    ``policy`` needs ``predict(obs) -> PolicyOutput`` and may define
    ``begin_episode(q)``. Unbindable candidates in training modes are skipped
    and appended to ``skipped`` when given.
    """
    mode = Mode(mode)
    H, W = scene.shape
    if history is None:
        history = np.zeros((H, W), dtype=np.uint8)
    graph = CurbGraph()
    samples: list = []
    gt = scene.gt if mode is not Mode.TEST else None
    begin = getattr(policy, "begin_episode", None)
    for q in Q:
        try:
            s = reset(scene.features, history, q, gt, mode, cfg, graph)
        except LookupError as exc:
            log.info("skipping candidate: %s", exc)
            if skipped is not None:
                skipped.append(tuple(np.asarray(q, dtype=float)))
            continue
        if begin is not None:
            begin(q)
        done = False
        while not done:
            out = policy.predict(observe(s, cfg.d))
            sample, done = step(s, out, cfg.d, cfg)
            if sample is not None:
                samples.append(sample)
        graph.instances.append(list(s.chain))
    return graph, samples


def with_snap(cfg: EnvConfig, snap: float) -> EnvConfig:
    return replace(cfg, snap=snap, oracle=replace(cfg.oracle, stray_stop=snap))
