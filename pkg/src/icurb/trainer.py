"""DAgger-style training: per image, one restricted exploration followed by
``n_free`` free explorations, retraining on the aggregated samples after each."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .candidates import CandidateConfig, initial_candidates
from .env import EnvConfig, Mode, run_image
from .metrics import DEFAULT_TAUS, evaluate
from .policy import LossReport, MlpPolicy, TrainingDiverged
from .synth import GroundTruth, SceneBundle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    n_free: int = 5
    epochs_per_train: int = 8
    batch_size: int = 32
    lr: float = 0.001
    momentum: float = 0.9
    searn_mode: bool = False
    skip_restricted: bool = False
    skip_free: bool = False
    use_history: bool = True
    cross_image: bool = False  # keep D across images instead of resetting it
    seed: int = 0
    noise_sigma: float = 1.0
    pool: int = 8
    hidden: tuple = (64, 64)
    eval_every: int = 50
    eval_q: str = "candidates"  # or "gt"
    env: EnvConfig = field(default_factory=EnvConfig)
    candidates: CandidateConfig = field(default_factory=CandidateConfig)


class ImageTrainingError(RuntimeError):
    def __init__(self, image_id, cause):
        super().__init__(f"training diverged on image {image_id}: {cause}")
        self.image_id = image_id


@dataclass
class RunLog:
    records: list = field(default_factory=list)

    def add(self, **rec) -> None:
        self.records.append(rec)

    def of_phase(self, prefix: str) -> list:
        return [r for r in self.records if str(r.get("phase", "")).startswith(prefix)]

    def evals(self) -> list:
        return self.of_phase("eval")

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


class Dataset:
    """Append-only sample store with the encoded inputs cached alongside."""

    def __init__(self):
        self.samples: list = []
        self._x: list = []

    def __len__(self) -> int:
        return len(self.samples)

    def extend(self, samples, policy: MlpPolicy) -> None:
        for s in samples:
            self.samples.append(s)
            self._x.append(policy.encode(s.obs))

    def clear(self) -> None:
        self.samples.clear()
        self._x.clear()

    def arrays(self):
        X = np.stack(self._x)
        Y = np.stack([np.asarray(s.coord_label, dtype=np.float64) for s in self.samples])
        S = np.array([float(s.stop_label) for s in self.samples])
        return X, Y, S


def stop_weight(stop_labels: np.ndarray) -> float:
    pos = float(np.sum(stop_labels))
    neg = float(len(stop_labels) - pos)
    return max(1.0, neg / pos) if pos > 0 else 1.0


def train_on_dataset(policy: MlpPolicy, data: Dataset, cfg: TrainConfig, rng) -> LossReport:
    X, Y, S = data.arrays()
    w = stop_weight(S)
    reports = []
    for _ in range(cfg.epochs_per_train):
        order = rng.permutation(len(X))
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            reports.append(policy.train_arrays(X[idx], Y[idx], S[idx], cfg.lr, w))
    n = len(reports)
    return LossReport(
        sum(r.coord_l1 for r in reports) / n,
        sum(r.stop_bce for r in reports) / n,
        sum(r.total for r in reports) / n,
    )


def noisy_gt_candidates(gt: GroundTruth, sigma: float, rng) -> list:
    H, W = gt.height, gt.width
    out = []
    for inst in gt.instances:
        q = inst.init_end + rng.normal(0.0, sigma, 2)
        out.append(np.clip(q, [0.0, 0.0], [H - 1.0, W - 1.0]))
    return out


def train_on_image(
    scene: SceneBundle,
    policy: MlpPolicy,
    cfg: TrainConfig,
    rng: Optional[np.random.Generator] = None,
    image_id=0,
    data: Optional[Dataset] = None,
    log_: Optional[RunLog] = None,
) -> list:
    """Run the exploration/training schedule on one image; returns its log records."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    runlog = RunLog()
    if data is None:
        data = Dataset()
    if not cfg.cross_image:
        data.clear()
    Q = noisy_gt_candidates(scene.gt, cfg.noise_sigma, rng)

    phases = [] if cfg.skip_restricted else [("restricted", Mode.RESTRICTED)]
    n_free = 0 if cfg.skip_free else cfg.n_free
    phases += [(f"free{i}", Mode.FREE) for i in range(1, n_free + 1)]

    for k, (name, mode) in enumerate(phases):
        skipped: list = []
        _, samples = run_image(scene, policy, Q, mode, cfg.env, skipped=skipped)
        if cfg.searn_mode and k > 0:
            data.clear()
        data.extend(samples, policy)
        rec = dict(image=image_id, phase=name, explored=len(samples), dataset=len(data), skipped=len(skipped))
        if len(data):
            try:
                rep = train_on_dataset(policy, data, cfg, rng)
            except TrainingDiverged as exc:
                raise ImageTrainingError(image_id, exc) from exc
            rec.update(coord_l1=rep.coord_l1, stop_bce=rep.stop_bce, total=rep.total)
        runlog.add(**rec)
    if log_ is not None:
        log_.records.extend(runlog.records)
    return runlog.records


def init_policy(cfg: TrainConfig, in_channels: int) -> MlpPolicy:
    return MlpPolicy(
        d=cfg.env.d,
        in_channels=in_channels,
        pool=cfg.pool,
        hidden=cfg.hidden,
        use_history=cfg.use_history,
        seed=cfg.seed,
        momentum=cfg.momentum,
    )


def infer_graph(policy, scene: SceneBundle, env: EnvConfig, cand: CandidateConfig, q_source="candidates"):
    if q_source == "gt":
        Q = [inst.init_end for inst in scene.gt.instances]
        scores = [1.0] * len(Q)
    else:
        cs = initial_candidates(scene.seg_soft, scene.heatmap, cand)
        Q, scores = cs.points, cs.scores
    graph, _ = run_image(scene, policy, Q, Mode.TEST, env)
    graph.candidates = [(float(p[0]), float(p[1]), float(s)) for p, s in zip(Q, scores)]
    return graph


def evaluate_policy(
    policy,
    scenes: Sequence[SceneBundle],
    env: EnvConfig,
    cand: CandidateConfig = CandidateConfig(),
    q_source: str = "candidates",
    taus=DEFAULT_TAUS,
) -> dict:
    reports = [evaluate(infer_graph(policy, sc, env, cand, q_source), sc.gt, taus) for sc in scenes]
    out = {"cc": float(np.mean([r.cc for r in reports]))}
    for t in taus:
        out[f"p_{t:g}"] = float(np.mean([r.prf[float(t)][0] for r in reports]))
        out[f"r_{t:g}"] = float(np.mean([r.prf[float(t)][1] for r in reports]))
        out[f"f1_{t:g}"] = float(np.mean([r.prf[float(t)][2] for r in reports]))
    return out


def train_run(
    scenes: Iterable[SceneBundle],
    cfg: TrainConfig = TrainConfig(),
    eval_scenes: Optional[Sequence[SceneBundle]] = None,
    policy: Optional[MlpPolicy] = None,
):
    """Train a fresh policy over ``scenes`` in order; returns ``(policy, RunLog)``."""
    runlog = RunLog()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    data = Dataset()

    def do_eval(n_images):
        if eval_scenes:
            m = evaluate_policy(policy, eval_scenes, cfg.env, cfg.candidates, cfg.eval_q)
            runlog.add(image=n_images, phase="eval", **m)
            log.info("eval after %d images: F1(2)=%.3f CC=%.3f", n_images, m["f1_2"], m["cc"])

    n = 0
    for scene in scenes:
        if policy is None:
            policy = init_policy(cfg, scene.features.shape[0] + 1)
            do_eval(0)
        train_on_image(scene, policy, cfg, rng, image_id=n, data=data, log_=runlog)
        n += 1
        if cfg.eval_every and n % cfg.eval_every == 0:
            do_eval(n)
    if policy is None:
        raise ValueError("train_run needs at least one scene")
    if not (cfg.eval_every and n % cfg.eval_every == 0):
        do_eval(n)
    return policy, runlog


def config_record(cfg: TrainConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg), default=str))
