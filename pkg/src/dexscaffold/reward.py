"""Dense task-agnostic keypoint-tracking reward."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RewardParams:
    beta: float = 20.0      # 1/m
    epsilon: float = 0.01

    def __post_init__(self):
        if self.beta <= 0 or self.epsilon <= 0:
            raise ValueError("beta and epsilon must be positive")


def tracking_error(tracked, planned):
    """Mean Euclidean distance over the keypoint axis (second to last).

    Accepts ``(k, 3)`` or batched ``(..., k, 3)`` arrays.
    """
    a = np.asarray(tracked, dtype=np.float64)
    b = np.asarray(planned, dtype=np.float64)
    if a.shape != b.shape or a.shape[-1] != 3 or a.ndim < 2:
        raise DimensionMismatch(f"tracked {a.shape} vs planned {b.shape}")
    err = np.linalg.norm(a - b, axis=-1).mean(axis=-1)
    return float(err) if err.ndim == 0 else err


def reward(tracked, planned, n_contact, params: RewardParams = RewardParams()):
    """``exp(-beta * mean_err) + exp(-1 / (n_contact + eps))``; batched over leading dims."""
    err = tracking_error(tracked, planned)
    n = np.asarray(n_contact, dtype=np.float64)
    if np.any(n < 0) or np.any(n > 4):
        raise ValueError("contact count must lie in [0, 4]")
    r = np.exp(-params.beta * np.asarray(err)) + np.exp(-1.0 / (n + params.epsilon))
    return float(r) if np.ndim(r) == 0 else r
