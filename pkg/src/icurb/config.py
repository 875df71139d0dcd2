"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment. ``auto`` leaves a size-dependent
default to be derived from the image size. Unknown keys are an error, so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .candidates import CandidateConfig
from .env import EnvConfig
from .metrics import DEFAULT_TAUS
from .synth import SynthConfig
from .trainer import TrainConfig

_T = TrainConfig()
_C = CandidateConfig()
_S = SynthConfig()


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AppConfig:
    # image and synthetic data
    height: int = _S.height
    width: int = _S.width
    n_instances: Optional[int] = None
    min_instances: int = _S.min_instances
    max_instances: int = _S.max_instances
    straight: bool = _S.straight
    dropout_p: float = _S.dropout_p
    blob_rate: float = _S.blob_rate
    texture_std: float = _S.texture_std
    heat_false_rate: float = _S.heat_false_rate
    sigma_f: float = _S.sigma_f
    heat_sigma: float = _S.heat_sigma
    # environment and expert; snap / kill_stray in full-scale (1000 px) pixels
    d: Optional[int] = None
    delta_min: float = 3.0
    delta_max: Optional[float] = None
    delta_exp: Optional[float] = None
    snap: float = 15.0
    kill_stray: float = 30.0
    max_steps: Optional[int] = None
    stop_threshold: float = 0.5
    stray_from: str = "current"
    # training
    n_free: int = _T.n_free
    lr: float = _T.lr
    momentum: float = _T.momentum
    batch_size: int = _T.batch_size
    epochs_per_train: int = _T.epochs_per_train
    seed: int = _T.seed
    noise_sigma: float = _T.noise_sigma
    pool: int = _T.pool
    hidden: tuple = _T.hidden
    use_history: bool = _T.use_history
    searn_mode: bool = _T.searn_mode
    skip_restricted: bool = _T.skip_restricted
    skip_free: bool = _T.skip_free
    cross_image: bool = _T.cross_image
    # candidates
    seg_threshold: float = _C.seg_threshold
    min_skel_len: float = _C.min_skel_len
    nms_radius: int = _C.nms_radius
    p_add: float = _C.p_add
    p_keep: float = _C.p_keep
    merge_radius: float = _C.merge_radius
    # evaluation
    taus: tuple = DEFAULT_TAUS

    # -- parsing ----------------------------------------------------------

    @classmethod
    def keys(cls) -> list:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "AppConfig":
        vals = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected key = value, got {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            if k in vals:
                raise ConfigError(f"{source}:{n}: duplicate key {k!r}")
            vals[k] = v
        return cls().override(vals, source)

    @classmethod
    def load(cls, path) -> "AppConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
        return cls.from_text(text, str(p))

    def override(self, items: dict, source: str = "override") -> "AppConfig":
        """Apply textual ``{key: value}`` settings on top of this config."""
        types = {f.name: f for f in fields(self)}
        upd = {}
        for k, v in items.items():
            if k not in types:
                raise ConfigError(f"{source}: unknown key {k!r}")
            upd[k] = _parse(k, str(v), getattr(AppConfig(), k), types[k].type, source)
        cfg = dataclasses.replace(self, **upd)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.height < 8 or self.width < 8:
            raise ConfigError("image must be at least 8x8")
        if self.d is not None and (self.d < 4 or self.d % 2):
            raise ConfigError(f"d must be even and >= 4, got {self.d}")
        if self.stray_from not in ("current", "pred"):
            raise ConfigError(f"stray_from must be 'current' or 'pred', got {self.stray_from!r}")
        if self.min_instances > self.max_instances:
            raise ConfigError("min_instances > max_instances")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs_per_train < 1 or self.n_free < 0:
            raise ConfigError("lr, batch_size, epochs_per_train must be positive and n_free >= 0")
        if not self.taus or any(t <= 0 for t in self.taus):
            raise ConfigError("taus must be a non-empty list of positive tolerances")

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(getattr(self, k))}\n" for k in self.keys())

    def as_dict(self) -> dict:
        return {k: _fmt(getattr(self, k)) for k in self.keys()}

    # -- views ------------------------------------------------------------

    def synth_config(self) -> SynthConfig:
        return dataclasses.replace(
            _S,
            height=self.height,
            width=self.width,
            n_instances=self.n_instances,
            min_instances=self.min_instances,
            max_instances=self.max_instances,
            straight=self.straight,
            dropout_p=self.dropout_p,
            blob_rate=self.blob_rate,
            texture_std=self.texture_std,
            heat_false_rate=self.heat_false_rate,
            sigma_f=self.sigma_f,
            heat_sigma=self.heat_sigma,
        )

    def env_config(self, height: Optional[int] = None, width: Optional[int] = None) -> EnvConfig:
        env = EnvConfig.for_image(
            height or self.height,
            width or self.width,
            d=self.d,
            snap_full=self.snap,
            kill_full=self.kill_stray,
            max_steps=self.max_steps,
            delta_min=self.delta_min,
            delta_max=self.delta_max,
            delta_exp=self.delta_exp,
            stray_from=self.stray_from,
        )
        return dataclasses.replace(env, stop_threshold=self.stop_threshold)

    def candidate_config(self) -> CandidateConfig:
        return CandidateConfig(
            seg_threshold=self.seg_threshold,
            min_skel_len=self.min_skel_len,
            nms_radius=self.nms_radius,
            p_add=self.p_add,
            p_keep=self.p_keep,
            merge_radius=self.merge_radius,
        )

    def train_config(self, height: Optional[int] = None, width: Optional[int] = None) -> TrainConfig:
        return dataclasses.replace(
            _T,
            n_free=self.n_free,
            lr=self.lr,
            momentum=self.momentum,
            batch_size=self.batch_size,
            epochs_per_train=self.epochs_per_train,
            seed=self.seed,
            noise_sigma=self.noise_sigma,
            pool=self.pool,
            hidden=tuple(self.hidden),
            use_history=self.use_history,
            searn_mode=self.searn_mode,
            skip_restricted=self.skip_restricted,
            skip_free=self.skip_free,
            cross_image=self.cross_image,
            env=self.env_config(height, width),
            candidates=self.candidate_config(),
        )


ABLATIONS = {
    "no-history": {"use_history": "false"},
    "no-restricted": {"skip_restricted": "true"},
    "no-free": {"skip_free": "true"},
    "searn": {"searn_mode": "true"},
}


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(key: str, text: str, default, annotation, source: str):
    optional = "Optional" in str(annotation)
    if text.lower() == "auto":
        if optional:
            return None
        raise ConfigError(f"{source}: key {key!r} has no automatic value")
    kind = str(annotation).replace("Optional[", "").rstrip("]")
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            x = float(text)
            if x != x or x in (float("inf"), float("-inf")):
                raise ValueError(text)
            return x
        if kind == "str":
            return text
        if kind == "tuple":
            conv = int if default and isinstance(default[0], int) else float
            return tuple(conv(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"{source}: bad value for {key!r}: {text!r}") from None
    raise ConfigError(f"{source}: unsupported key type for {key!r}")
