"""Agent policies.

``MlpPolicy`` is the trainable agent: an average-pooling patch encoder, two
tanh hidden layers, a tanh coordinate head and a sigmoid stop head, trained
with hand-derived gradients. ``ExpertPolicy`` and ``NoisyExpert`` wrap the
ground-truth oracle behind the same ``predict`` interface.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .actions import PolicyOutput, scale_offset, unscale_offset  # noqa: F401  (re-exported)
from .geometry import nearest_point
from .oracle import OracleConfig, UnbindableCandidate, bind_instance, expert_action
from .synth import GroundTruth

MAGIC = b"ICPOL1"
PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wc", "bc", "Ws", "bs")


class TrainingDiverged(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class LossReport:
    coord_l1: float
    stop_bce: float
    total: float


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class MlpPolicy:
    def __init__(
        self,
        d: int = 32,
        in_channels: int = 4,
        pool: int = 8,
        hidden: Sequence[int] = (64, 64),
        use_history: bool = True,
        seed: int = 0,
        momentum: float = 0.0,
        stop_lambda: float = 1.0,
    ):
        if d % pool:
            raise ValueError(f"pool size {pool} must divide crop size {d}")
        self.d = int(d)
        self.in_channels = int(in_channels)
        self.pool = int(pool)
        self.hidden = tuple(int(h) for h in hidden)
        self.use_history = bool(use_history)
        self.seed = int(seed)
        self.momentum = float(momentum)
        self.stop_lambda = float(stop_lambda)
        self.n_in = self.in_channels * self.pool * self.pool + 4

        rng = np.random.default_rng(self.seed)
        h1, h2 = self.hidden
        shapes = {
            "W1": (self.n_in, h1), "b1": (h1,),
            "W2": (h1, h2), "b2": (h2,),
            "Wc": (h2, 2), "bc": (2,),
            "Ws": (h2, 1), "bs": (1,),
        }  # fmt: skip
        fan_in = {"W1": self.n_in, "b1": self.n_in, "W2": h1, "b2": h1, "Wc": h2, "bc": h2, "Ws": h2, "bs": h2}
        self.params = {}
        for name in PARAM_NAMES:
            bound = 1.0 / math.sqrt(fan_in[name])
            self.params[name] = rng.uniform(-bound, bound, size=shapes[name])
        self._velocity = {k: np.zeros_like(v) for k, v in self.params.items()}

    # -- encoding ---------------------------------------------------------

    def encode(self, obs) -> np.ndarray:
        patch = np.asarray(obs.patch, dtype=np.float64)
        if patch.shape != (self.in_channels, self.d, self.d):
            raise ValueError(
                f"observation patch {patch.shape} does not match policy "
                f"({self.in_channels}, {self.d}, {self.d})"
            )
        k = self.d // self.pool
        pooled = patch.reshape(self.in_channels, self.pool, k, self.pool, k).mean(axis=(2, 4))
        coords = np.concatenate([obs.cur_norm, obs.prev_norm]) if self.use_history else np.zeros(4)
        return np.concatenate([pooled.ravel(), coords])

    def encode_batch(self, observations) -> np.ndarray:
        return np.stack([self.encode(o) for o in observations])

    # -- forward / backward ----------------------------------------------

    def _forward(self, X: np.ndarray, params=None):
        p = self.params if params is None else params
        h1 = np.tanh(X @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        delta = np.tanh(h2 @ p["Wc"] + p["bc"])
        zs = (h2 @ p["Ws"] + p["bs"])[:, 0]
        return h1, h2, delta, zs

    def predict(self, obs) -> PolicyOutput:
        _, _, delta, zs = self._forward(self.encode(obs)[None])
        return PolicyOutput((float(delta[0, 0]), float(delta[0, 1])), float(_sigmoid(zs[0])))

    def loss(self, X, Y, S, stop_weight: float = 1.0, params=None) -> LossReport:
        _, _, delta, zs = self._forward(X, params)
        return self._loss_terms(delta, zs, Y, S, stop_weight)

    def _loss_terms(self, delta, zs, Y, S, stop_weight) -> LossReport:
        coord = float(np.mean(np.abs(delta - Y)))
        # weighted BCE from logits: -w*y*log(p) - (1-y)*log(1-p)
        bce = float(np.mean(stop_weight * S * _softplus(-zs) + (1.0 - S) * _softplus(zs)))
        return LossReport(coord, bce, coord + self.stop_lambda * bce)

    def loss_and_grads(self, X, Y, S, stop_weight: float = 1.0):
        p = self.params
        N = X.shape[0]
        h1, h2, delta, zs = self._forward(X)
        report = self._loss_terms(delta, zs, Y, S, stop_weight)

        g_delta = np.sign(delta - Y) / (2 * N)
        g_zc = g_delta * (1.0 - delta**2)
        prob = _sigmoid(zs)
        g_zs = self.stop_lambda * (stop_weight * S * (prob - 1.0) + (1.0 - S) * prob) / N

        grads = {
            "Wc": h2.T @ g_zc,
            "bc": g_zc.sum(0),
            "Ws": h2.T @ g_zs[:, None],
            "bs": np.array([g_zs.sum()]),
        }
        g_h2 = g_zc @ p["Wc"].T + g_zs[:, None] @ p["Ws"].T
        g_a2 = g_h2 * (1.0 - h2**2)
        grads["W2"] = h1.T @ g_a2
        grads["b2"] = g_a2.sum(0)
        g_a1 = (g_a2 @ p["W2"].T) * (1.0 - h1**2)
        grads["W1"] = X.T @ g_a1
        grads["b1"] = g_a1.sum(0)
        return report, grads

    def train_batch(self, batch, lr: float, stop_weight: float = 1.0) -> LossReport:
        """One SGD step on ``batch``; returns the losses before the step."""
        if not batch:
            raise ValueError("empty training batch")
        X = self.encode_batch([s.obs for s in batch])
        Y = np.stack([np.asarray(s.coord_label, dtype=np.float64) for s in batch])
        S = np.array([float(s.stop_label) for s in batch])
        return self.train_arrays(X, Y, S, lr, stop_weight)

    def train_arrays(self, X, Y, S, lr: float, stop_weight: float = 1.0) -> LossReport:
        report, grads = self.loss_and_grads(X, Y, S, stop_weight)
        if not math.isfinite(report.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingDiverged(f"non-finite loss {report.total}")
        for name in PARAM_NAMES:
            v = self._velocity[name]
            v *= self.momentum
            v -= lr * grads[name]
            self.params[name] += v
        return report

    # -- persistence -----------------------------------------------------

    def header(self) -> tuple:
        return (self.d, self.in_channels, self.pool, *self.hidden, int(self.use_history), self.seed)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        head = self.header()
        parts = [MAGIC, struct.pack("<I", len(head)), struct.pack(f"<{len(head)}I", *head)]
        for name in PARAM_NAMES:
            parts.append(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MlpPolicy":
        if data[: len(MAGIC)] != MAGIC:
            raise CheckpointError(f"bad checkpoint magic at byte 0: {data[:len(MAGIC)]!r}")
        off = len(MAGIC)
        try:
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            head = struct.unpack_from(f"<{n}I", data, off)
            off += 4 * n
        except struct.error as exc:
            raise CheckpointError(f"truncated checkpoint header at byte {off}") from exc
        if n != 7:
            raise CheckpointError(f"unexpected header length {n} at byte {len(MAGIC)}")
        d, c, pool, h1, h2, use_hist, seed = head
        pol = cls(d=d, in_channels=c, pool=pool, hidden=(h1, h2), use_history=bool(use_hist), seed=seed)
        for name in PARAM_NAMES:
            size = pol.params[name].size
            if off + 8 * size > len(data):
                raise CheckpointError(f"truncated parameter {name} at byte {off}")
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=off)
            pol.params[name] = arr.reshape(pol.params[name].shape).astype(np.float64)
            off += 8 * size
        if off != len(data):
            raise CheckpointError(f"{len(data) - off} trailing bytes at byte {off}")
        return pol

    @classmethod
    def load(cls, path) -> "MlpPolicy":
        return cls.from_bytes(Path(path).read_bytes())


class ExpertPolicy:
    """Walks the bound ground-truth instance in fixed arc steps."""

    def __init__(self, gt: GroundTruth, d: int, cfg: OracleConfig = OracleConfig()):
        self.gt = gt
        self.d = d
        self.cfg = cfg
        self.binding = None
        self._target = None  # (point, arc) handed out last time

    def begin_episode(self, q) -> None:
        try:
            self.binding = bind_instance(self.gt, q, self.cfg.bind_radius)
        except UnbindableCandidate:
            self.binding = None
        self._target = None

    def _sync(self, cur: np.ndarray) -> None:
        b = self.binding
        if self._target is not None and np.hypot(*(cur - self._target[0])) < 1e-6:
            b.arc_pos = self._target[1]
            return
        # the committed vertex is not where we pointed: re-project ahead of us
        window = (b.arc_pos, b.arc_pos + 2 * self.cfg.dexp(self.d))
        try:
            _, s, _ = nearest_point(b.instance.line, cur, window)
        except LookupError:
            return
        b.arc_pos = max(b.arc_pos, s)

    def predict(self, obs) -> PolicyOutput:
        if self.binding is None:
            return PolicyOutput((0.0, 0.0), 1.0)
        cur = np.asarray(obs.cur, dtype=np.float64)
        self._sync(cur)
        b = self.binding
        out = expert_action(b, cur, self.d, self.cfg)
        arc = min(b.arc_pos + self.cfg.dexp(self.d), b.instance.length)
        self._target = (cur + unscale_offset(out.delta, self.d), arc)
        return out


class NoisyExpert:
    """Expert with Gaussian displacement noise and random stop flips."""

    def __init__(self, expert: ExpertPolicy, sigma_noise: float, p_flip: float, seed: int):
        self.expert = expert
        self.sigma = float(sigma_noise)
        self.p_flip = float(p_flip)
        self.rng = np.random.default_rng(seed)

    def begin_episode(self, q) -> None:
        self.expert.begin_episode(q)

    def predict(self, obs) -> PolicyOutput:
        out = self.expert.predict(obs)
        noise = self.rng.normal(0.0, self.sigma, 2) if self.sigma > 0 else np.zeros(2)
        delta = np.clip(np.asarray(out.delta) + noise, -1.0, 1.0)
        stop = out.stop_prob > 0.5
        if self.p_flip > 0 and self.rng.random() < self.p_flip:
            stop = not stop
        return PolicyOutput((float(delta[0]), float(delta[1])), 1.0 if stop else 0.0)


def make_expert_policy(gt: GroundTruth, d: int, cfg: OracleConfig = OracleConfig()) -> ExpertPolicy:
    return ExpertPolicy(gt, d, cfg)


def make_noisy_expert(
    gt: GroundTruth,
    d: int,
    sigma_noise: float,
    p_flip: float,
    seed: int,
    cfg: OracleConfig = OracleConfig(),
) -> NoisyExpert:
    return NoisyExpert(ExpertPolicy(gt, d, cfg), sigma_noise, p_flip, seed)
