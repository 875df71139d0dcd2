"""The expert: instance binding, expert actions and dynamic training labels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .actions import PolicyOutput, scale_offset
from .geometry import in_window, nearest_point
from .synth import CurbInstance, GroundTruth


class UnbindableCandidate(LookupError):
    """An initial vertex is too far from every ground-truth instance."""


@dataclass(frozen=True)
class OracleConfig:
    delta_min: float = 3.0
    delta_max: Optional[float] = None  # None -> d / 2
    delta_exp: Optional[float] = None  # None -> d / 4
    stray_stop: float = 15.0
    bind_radius: float = 20.0
    stray_from: str = "current"  # "current" vertex or the "pred"iction

    def dmax(self, d: int) -> float:
        return float(self.delta_max) if self.delta_max is not None else d / 2.0

    def dexp(self, d: int) -> float:
        return float(self.delta_exp) if self.delta_exp is not None else d / 4.0


@dataclass
class InstanceBinding:
    instance: CurbInstance
    arc_pos: float
    started_at: float


@dataclass(frozen=True)
class LabelResult:
    coord_label: np.ndarray
    stop_label: int
    new_arc_pos: float
    stray_dist: float


def bind_instance(gt: GroundTruth, q, bind_radius: float = 20.0) -> InstanceBinding:
    if not gt.instances:
        raise ValueError("ground truth has no instances")
    best = None
    for inst in gt.instances:
        _, s, dist = nearest_point(inst.line, q)
        if best is None or dist < best[2] - 1e-9:
            best = (inst, s, dist)
    inst, s, dist = best
    if dist > bind_radius:
        raise UnbindableCandidate(
            f"candidate {tuple(np.round(q, 3))} is {dist:.2f} px from the nearest instance "
            f"(bind radius {bind_radius})"
        )
    return InstanceBinding(inst, s, s)


def dynamic_label(
    b: InstanceBinding, pred, crop_center, d: int, cfg: OracleConfig = OracleConfig()
) -> LabelResult:
    """Label for the prediction ``pred`` made from a crop centred at ``crop_center``.

    The label is the instance point nearest to ``pred`` among those at least
    ``delta_min`` and at most ``delta_max`` arc-pixels ahead of the expert
    position and inside the crop. Stop is labelled when the end is reached
    (takes precedence), when no such point exists, or when ``pred`` is more
    than ``stray_stop`` from the instance.
    """
    line = b.instance.line
    pred = np.asarray(pred, dtype=np.float64)
    total = line.length
    lo = b.arc_pos + cfg.delta_min
    hi = b.arc_pos + cfg.dmax(d)

    if lo > total:
        end = line.points[-1]
        return LabelResult(end.copy(), 1, b.arc_pos, float(np.hypot(*(pred - end))))

    sel = np.nonzero(
        (line.cum_len >= lo) & (line.cum_len <= hi) & in_window(line.points, crop_center, d)
    )[0]
    _, _, off_track = nearest_point(line, pred)
    probe = pred if cfg.stray_from == "pred" else np.asarray(crop_center, dtype=np.float64)
    _, _, strayed = nearest_point(line, probe)
    if sel.size == 0:
        return LabelResult(line.point_at(lo), 1, b.arc_pos, off_track)

    diff = line.points[sel] - pred
    d2 = np.einsum("ij,ij->i", diff, diff)
    k = sel[int(np.argmin(d2))]
    label = line.points[k].copy()
    if strayed > cfg.stray_stop:
        return LabelResult(label, 1, b.arc_pos, off_track)
    return LabelResult(label, 0, float(line.cum_len[k]), float(np.hypot(*(pred - label))))


def expert_action(
    b: InstanceBinding, obs_center, d: int, cfg: OracleConfig = OracleConfig()
) -> PolicyOutput:
    line = b.instance.line
    target = line.point_at(b.arc_pos + cfg.dexp(d))
    delta = scale_offset(target - np.asarray(obs_center, dtype=np.float64), d)
    stop = 1.0 if b.arc_pos + cfg.delta_min >= line.length else 0.0
    return PolicyOutput((float(delta[0]), float(delta[1])), stop)
