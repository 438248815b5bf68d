"""Cosine masking schedule and the decaying Gumbel noise used when ranking slots."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tokens import ConfidenceVector, UsageError


@dataclass(frozen=True)
class MaskSchedule:
    """Number of masked slots after each of ``T`` decoding steps.

    ``counts[0] == N`` (everything masked) and ``counts[T] == 0``.
    """

    T: int
    counts: tuple[int, ...]

    @property
    def N(self) -> int:
        return self.counts[0]

    def keep(self, t: int) -> int:
        """Slots left unmasked once step ``t`` has been reached."""
        return self.N - self.counts[t]


def cosine_mask_counts(N: int, T: int) -> MaskSchedule:
    if N < 1 or T < 1:
        raise UsageError(f"cosine schedule needs N >= 1 and T >= 1, got N={N}, T={T}")
    counts = [math.floor(N * math.cos(math.pi / 2 * t / T)) for t in range(T + 1)]
    # cos(pi/2) evaluates to 6e-17, not 0
    counts[0], counts[T] = N, 0
    return MaskSchedule(T, tuple(counts))


@dataclass(frozen=True)
class NoiseSchedule:
    """Gumbel noise magnitude ``base_magnitude * (1 - (t + 1) / T)`` at step ``t``."""

    base_magnitude: float = 1.0
    T: int = 10

    def __post_init__(self):
        if self.base_magnitude < 0:
            raise UsageError("noise magnitude must be non-negative")
        if self.T < 1:
            raise UsageError("noise schedule needs T >= 1")

    def magnitude(self, t: int) -> float:
        if not 0 <= t < self.T:
            raise UsageError(f"step {t} outside noise schedule of length {self.T}")
        return self.base_magnitude * max(0.0, 1.0 - (t + 1) / self.T)

    def rescaled(self, T: int) -> "NoiseSchedule":
        return NoiseSchedule(self.base_magnitude, T)


def perturb_scores(scores: np.ndarray, pinned, t: int, sched: NoiseSchedule, rng) -> np.ndarray:
    """Batched form of :func:`perturb_confidence` on a ``(B, N)`` score array."""
    mag = sched.magnitude(t)
    if mag == 0.0:
        return scores
    noise = mag * rng.gumbel(size=scores.shape)
    if pinned is not None:
        noise = np.where(pinned, 0.0, noise)
    return scores + noise


def perturb_confidence(
    conf: ConfidenceVector, t: int, sched: NoiseSchedule, rng: np.random.Generator
) -> ConfidenceVector:
    scores = perturb_scores(conf.scores[None, :], conf.pinned[None, :], t, sched, rng)[0]
    return ConfidenceVector(scores, conf.kind, conf.pinned)
