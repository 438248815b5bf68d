"""Token sequences, mask matrices, codebooks and confidence vectors.

Sequences are stored as tuples of ints with ``MASK`` (-1) marking an empty
slot. The batched helpers at the bottom work on ``(B, N)`` integer arrays with
the same convention and are what the samplers use internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MASK = -1


class UsageError(ValueError):
    """Raised when an operation is called with arguments violating its contract."""


class _Pinned:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "PINNED"


PINNED = _Pinned()
"""Confidence sentinel for a slot that must stay unmasked; outranks every score."""


@dataclass(frozen=True)
class TokenSeq:
    slots: tuple[int, ...]
    K: int | None = None

    def __post_init__(self):
        slots = tuple(int(s) for s in self.slots)
        object.__setattr__(self, "slots", slots)
        if not slots:
            raise UsageError("TokenSeq needs at least one slot")
        for s in slots:
            if s != MASK and (s < 0 or (self.K is not None and s >= self.K)):
                raise UsageError(f"token {s} out of range for K={self.K}")

    @classmethod
    def masked(cls, n: int, K: int | None = None) -> "TokenSeq":
        return cls((MASK,) * n, K)

    @classmethod
    def from_array(cls, arr, K: int | None = None) -> "TokenSeq":
        return cls(tuple(np.asarray(arr).tolist()), K)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.slots, dtype=np.int64)

    @property
    def N(self) -> int:
        return len(self.slots)

    def mask_positions(self) -> list[int]:
        return [i for i, s in enumerate(self.slots) if s == MASK]

    def is_complete(self) -> bool:
        return MASK not in self.slots

    def __len__(self) -> int:
        return len(self.slots)

    def __iter__(self):
        return iter(self.slots)

    def __getitem__(self, i):
        return self.slots[i]


@dataclass(frozen=True)
class MaskMatrix:
    """Per-slot keep bits: 1 keeps the token, 0 masks it."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise UsageError("mask bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def ones(cls, n: int) -> "MaskMatrix":
        return cls((1,) * n)

    @classmethod
    def zeros(cls, n: int) -> "MaskMatrix":
        return cls((0,) * n)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=bool)

    def __len__(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class ConfidenceVector:
    """Per-slot realism scores.

    ``scores`` holds the numeric values; ``pinned`` flags slots carrying the
    PINNED sentinel, whose numeric score is ignored when ranking.
    """

    scores: np.ndarray
    kind: str = "prior-prob"
    pinned: np.ndarray = field(default=None)

    KINDS = ("prior-prob", "self-critic", "external-critic")

    def __post_init__(self):
        scores = np.array(self.scores, dtype=float)
        if scores.ndim != 1:
            raise UsageError("scores must be one-dimensional")
        pinned = (
            np.zeros(scores.shape, dtype=bool)
            if self.pinned is None
            else np.array(self.pinned, dtype=bool)
        )
        if pinned.shape != scores.shape:
            raise UsageError("pinned flags must match scores in length")
        if self.kind not in self.KINDS:
            raise UsageError(f"unknown confidence kind {self.kind!r}")
        scores.setflags(write=False)
        pinned.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "pinned", pinned)

    @classmethod
    def from_values(cls, values: Iterable, kind: str = "prior-prob") -> "ConfidenceVector":
        """Build from a list mixing floats and the ``PINNED`` sentinel."""
        values = list(values)
        pinned = [v is PINNED for v in values]
        scores = [0.0 if v is PINNED else float(v) for v in values]
        return cls(np.asarray(scores), kind, np.asarray(pinned))

    def values(self) -> list:
        return [PINNED if p else float(s) for s, p in zip(self.scores, self.pinned)]

    def __len__(self) -> int:
        return len(self.scores)


class Codebook:
    """K latent vectors of dimension D, indexed by token id."""

    def __init__(self, vectors, check_distinct: bool = True):
        vectors = np.array(vectors, dtype=float)
        if vectors.ndim != 2:
            raise UsageError("codebook must be a K x D matrix")
        if vectors.shape[0] < 2:
            raise UsageError("codebook needs K >= 2")
        if not np.all(np.isfinite(vectors)):
            raise UsageError("codebook rows must be finite")
        if check_distinct and len(np.unique(vectors, axis=0)) != len(vectors):
            raise UsageError("codebook rows must be distinct")
        vectors.setflags(write=False)
        self.vectors = vectors

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    @property
    def D(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens)
        if np.any(tokens < 0) or np.any(tokens >= self.K):
            raise UsageError("token id out of codebook range")
        return self.vectors[tokens]

    def __eq__(self, other) -> bool:
        return isinstance(other, Codebook) and np.array_equal(self.vectors, other.vectors)

    def __repr__(self) -> str:
        return f"Codebook(K={self.K}, D={self.D})"

    def save(self, path) -> None:
        """Write the ``K D`` header followed by one row per line."""
        lines = [f"{self.K} {self.D}"]
        lines += [" ".join(repr(float(x)) for x in row) for row in self.vectors]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Codebook":
        text = Path(path).read_text().split("\n")
        rows = [line for line in text if line.strip()]
        if not rows:
            raise ValueError(f"{path}: empty codebook file")
        try:
            K, D = (int(x) for x in rows[0].split())
            vectors = [[float(x) for x in line.split()] for line in rows[1:]]
        except ValueError as exc:
            raise ValueError(f"{path}: malformed codebook ({exc})") from None
        if len(vectors) != K or any(len(v) != D for v in vectors):
            raise ValueError(f"{path}: header says {K}x{D}, body disagrees")
        return cls(vectors)


def apply_mask(seq: TokenSeq, m: MaskMatrix) -> TokenSeq:
    if len(seq) != len(m):
        raise UsageError(f"length mismatch: sequence {len(seq)} vs mask {len(m)}")
    slots = tuple(s if b else MASK for s, b in zip(seq.slots, m.bits))
    return TokenSeq(slots, seq.K)


def top_k_mask(conf: ConfidenceVector, keep: int) -> MaskMatrix:
    """Keep the ``keep`` best-ranked slots: PINNED first, then by score.

    Ties go to the lowest slot index.
    """
    n = len(conf)
    if not 0 <= keep <= n:
        raise UsageError(f"keep={keep} outside [0, {n}]")
    bits = keep_top(conf.scores[None, :], keep, conf.pinned[None, :])[0]
    return MaskMatrix(tuple(bits.astype(int)))


def latent_sq_dist(cb: Codebook, a: int, b: int) -> float:
    va, vb = cb.lookup([a, b])
    return float(np.sum((va - vb) ** 2))


# batched helpers


def keep_top(scores: np.ndarray, keep, pinned: np.ndarray | None = None) -> np.ndarray:
    """Boolean ``(B, N)`` keep-mask selecting the ``keep`` top slots of each row.

    ``keep`` is an int or a length-B array. Pinned slots rank above all scores;
    ties resolve to the lowest index because the sort is stable.
    """
    scores = np.asarray(scores, dtype=float)
    B, N = scores.shape
    key = -scores
    if pinned is not None:
        key = np.where(pinned, -np.inf, key)
    order = np.argsort(key, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(N)[None, :].repeat(B, 0), axis=1)
    keep = np.broadcast_to(np.asarray(keep), (B,))
    return ranks < keep[:, None]


def sq_dist_rows(cb: Codebook, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared latent distance between token arrays ``a`` and ``b`` (same shape)."""
    diff = cb.vectors[a] - cb.vectors[b]
    return np.sum(diff * diff, axis=-1)


def as_token_array(seqs: Sequence[TokenSeq] | np.ndarray) -> np.ndarray:
    if isinstance(seqs, np.ndarray):
        return seqs.astype(np.int64, copy=False)
    return np.asarray([s.slots for s in seqs], dtype=np.int64)
