"""Running per-dimension observation statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Array

STD_FLOOR = 1e-8


@dataclass
class RunningNormalizer:
    mean: Array
    var: Array
    count: float = 0.0
    training: bool = True

    @classmethod
    def create(cls, dim: int) -> RunningNormalizer:
        return cls(np.zeros(dim), np.zeros(dim), 0.0)

    def update(self, batch: Array) -> None:
        """Merge a batch of samples (Chan et al. parallel moments)."""
        x = np.asarray(batch, dtype=np.float64).reshape(-1, self.mean.shape[0])
        n = x.shape[0]
        if n == 0:
            return
        b_mean = x.mean(axis=0)
        b_var = x.var(axis=0)
        total = self.count + n
        delta = b_mean - self.mean
        m2 = self.var * self.count + b_var * n + delta ** 2 * self.count * n / total
        self.mean = self.mean + delta * n / total
        self.var = m2 / total
        self.count = total

    @property
    def std(self) -> Array:
        return np.sqrt(self.var)

    def normalize(self, obs: Array, update: bool | None = None) -> Array:
        """Normalise ``obs``; moments are refreshed first only in training mode."""
        if update if update is not None else self.training:
            self.update(obs)
        return (obs - self.mean) / np.maximum(self.std, STD_FLOOR)

    def eval(self) -> RunningNormalizer:
        self.training = False
        return self

    def train(self) -> RunningNormalizer:
        self.training = True
        return self


def normalize_obs(stats: RunningNormalizer, obs: Array) -> Array:
    return stats.normalize(obs)
