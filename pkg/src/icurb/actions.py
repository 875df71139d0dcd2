"""Agent action type and the crop-relative displacement scaling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PolicyOutput:
    delta: tuple  # scaled displacement, each component in [-1, 1]
    stop_prob: float


def _check_d(d) -> None:
    if d <= 0:
        raise ValueError(f"crop size must be positive, got {d}")


def scale_offset(pixel_offset, d) -> np.ndarray:
    """Pixel displacement -> [-1, 1]^2 (``2 * offset / d``, clamped)."""
    _check_d(d)
    return np.clip(2.0 * np.asarray(pixel_offset, dtype=np.float64) / d, -1.0, 1.0)


def unscale_offset(scaled, d) -> np.ndarray:
    _check_d(d)
    return np.clip(np.asarray(scaled, dtype=np.float64), -1.0, 1.0) * (d / 2.0)
