"""Prior models over partially masked token sequences.

Every prior implements ``predict_batch``: given a ``(B, N)`` token array with
``MASK`` entries it returns ``(B, N, K)`` categorical rows. Rows for masked
slots are the model's conditional given the observed slots; rows for observed
slots are one-hot on the observed token.
"""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np

from .tokens import MASK, TokenSeq, UsageError, as_token_array

MAX_JOINT_SIZE = 2**20


class ZeroSupportError(ValueError):
    """The observed context has probability zero under the joint."""


class PriorModel:
    K: int
    N: int

    def predict_batch(self, tokens: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, seq: TokenSeq) -> dict[int, np.ndarray]:
        """Categorical over ``[0, K)`` for every MASK slot of ``seq``."""
        probs = self.predict_batch(seq.as_array()[None, :])[0]
        return {i: probs[i] for i in seq.mask_positions()}

    def _check(self, tokens) -> np.ndarray:
        tokens = as_token_array(tokens)
        if tokens.ndim != 2 or tokens.shape[1] != self.N:
            raise UsageError(f"expected token array of shape (B, {self.N}), got {tokens.shape}")
        if np.any((tokens < MASK) | (tokens >= self.K)):
            raise UsageError("token ids must lie in [0, K) or be MASK")
        return tokens


def _one_hot_observed(tokens: np.ndarray, probs: np.ndarray, K: int) -> np.ndarray:
    observed = tokens != MASK
    if observed.any():
        probs[observed] = np.eye(K)[tokens[observed]]
    return probs


class TabularExactPrior(PriorModel):
    """Explicit probability table over all ``K**N`` sequences.

    Sequence index order is lexicographic with slot 0 most significant, the
    same order as ``itertools.product(range(K), repeat=N)``.
    """

    def __init__(self, joint, K: int, N: int):
        if K < 2 or N < 1:
            raise UsageError("need K >= 2 and N >= 1")
        if K**N > MAX_JOINT_SIZE:
            raise UsageError(f"K**N = {K**N} exceeds the enumeration guard {MAX_JOINT_SIZE}")
        joint = np.asarray(joint, dtype=float).reshape(-1)
        if joint.size != K**N:
            raise UsageError(f"joint has {joint.size} entries, expected {K**N}")
        if np.any(joint < 0) or not np.isclose(joint.sum(), 1.0, atol=1e-9):
            raise UsageError("joint must be non-negative and sum to 1")
        self.K, self.N = K, N
        self.joint = joint / joint.sum()
        self.joint.setflags(write=False)
        self.codes = enumerate_sequences(K, N)

    def _conditionals(self, rows: np.ndarray) -> np.ndarray:
        # rows: (U, N) unique masked patterns
        out = np.empty((len(rows), self.N, self.K))
        S = len(self.joint)
        chunk = max(1, 2**24 // (S * self.N))
        for lo in range(0, len(rows), chunk):
            part = rows[lo : lo + chunk]
            match = (self.codes[None, :, :] == part[:, None, :]) | (part[:, None, :] == MASK)
            w = np.all(match, axis=2) * self.joint[None, :]
            total = w.sum(axis=1)
            if np.any(total <= 0):
                bad = part[np.argmax(total <= 0)]
                raise ZeroSupportError(f"context {bad.tolist()} has zero probability")
            for i in range(self.N):
                out[lo : lo + len(part), i, :] = w @ np.eye(self.K)[self.codes[:, i]]
            out[lo : lo + len(part)] /= total[:, None, None]
        return out

    def predict_batch(self, tokens) -> np.ndarray:
        tokens = self._check(tokens)
        # patterns repeat heavily across chains; solve each distinct one once
        base = self.K + 1
        keys = (tokens + 1) @ (base ** np.arange(self.N, dtype=np.int64))
        uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        probs = self._conditionals(tokens[first])[inverse.reshape(-1)]
        return _one_hot_observed(tokens, probs, self.K)

    def probability(self, seq) -> float:
        idx = int(np.ravel_multi_index(tuple(np.asarray(seq)), (self.K,) * self.N))
        return float(self.joint[idx])

    def save(self, path) -> None:
        """Header ``K N`` then one probability per line in sequence-index order."""
        lines = [f"{self.K} {self.N}"] + [repr(float(p)) for p in self.joint]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "TabularExactPrior":
        rows = [r for r in Path(path).read_text().split("\n") if r.strip()]
        try:
            K, N = (int(x) for x in rows[0].split())
            joint = [float(r) for r in rows[1:]]
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}: malformed joint file ({exc})") from None
        return cls(joint, K, N)


def enumerate_sequences(K: int, N: int) -> np.ndarray:
    return np.asarray(list(itertools.product(range(K), repeat=N)), dtype=np.int64).reshape(-1, N)


def exact_conditional(p: TabularExactPrior, seq: TokenSeq, slot: int) -> np.ndarray:
    """Posterior of ``slot`` given every other observed slot of ``seq``."""
    if not 0 <= slot < p.N:
        raise UsageError(f"slot {slot} out of range")
    tokens = seq.as_array().copy()
    tokens[slot] = MASK
    return p.predict_batch(tokens[None, :])[0, slot]


class CountPrior(PriorModel):
    """Neighbour-context count model with add-one smoothing.

    ``counts[i, l, r, v]`` counts token ``v`` at slot ``i`` with left neighbour
    ``l`` and right neighbour ``r``; index ``K`` stands for the sequence edge.
    A masked neighbour is marginalised by summing over its axis.
    """

    def __init__(self, counts, K: int, N: int):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (N, K + 1, K + 1, K):
            raise UsageError(f"count table shape {counts.shape} != {(N, K + 1, K + 1, K)}")
        self.K, self.N = K, N
        self.counts = counts
        ext = np.zeros((N, K + 2, K + 2, K), dtype=np.int64)
        ext[:, : K + 1, : K + 1] = counts
        ext[:, K + 1, : K + 1] = counts.sum(axis=1)
        ext[:, : K + 1, K + 1] = counts.sum(axis=2)
        ext[:, K + 1, K + 1] = counts.sum(axis=(1, 2))
        smoothed = ext + 1.0
        self._table = smoothed / smoothed.sum(axis=-1, keepdims=True)

    def _context(self, tokens: np.ndarray):
        K = self.K
        B = len(tokens)
        edge = np.full((B, 1), K)
        left = np.concatenate([edge, tokens[:, :-1]], axis=1)
        right = np.concatenate([tokens[:, 1:], edge], axis=1)
        left = np.where(left == MASK, K + 1, left)
        right = np.where(right == MASK, K + 1, right)
        return left, right

    def predict_batch(self, tokens) -> np.ndarray:
        tokens = self._check(tokens)
        left, right = self._context(tokens)
        slot = np.arange(self.N)[None, :]
        probs = self._table[slot, left, right].copy()
        return _one_hot_observed(tokens, probs, self.K)

    def save(self, path) -> None:
        """Header ``K N``, then ``N*(K+1)**2`` lines of K counts ordered (slot, left, right)."""
        flat = self.counts.reshape(-1, self.K)
        lines = [f"{self.K} {self.N}"] + [" ".join(str(int(c)) for c in row) for row in flat]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "CountPrior":
        rows = [r for r in Path(path).read_text().split("\n") if r.strip()]
        try:
            K, N = (int(x) for x in rows[0].split())
            counts = np.asarray([[int(x) for x in r.split()] for r in rows[1:]])
            counts = counts.reshape(N, K + 1, K + 1, K)
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}: malformed count prior ({exc})") from None
        return cls(counts, K, N)


def fit_count_prior(data, K: int) -> CountPrior:
    tokens = as_token_array(list(data)) if not isinstance(data, np.ndarray) else data
    if len(tokens) == 0:
        raise UsageError("cannot fit a prior on zero sequences")
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2:
        raise UsageError("all training sequences must share one length")
    if np.any((tokens < 0) | (tokens >= K)):
        raise UsageError("training tokens must lie in [0, K) with no MASK")
    B, N = tokens.shape
    edge = np.full((B, 1), K)
    left = np.concatenate([edge, tokens[:, :-1]], axis=1)
    right = np.concatenate([tokens[:, 1:], edge], axis=1)
    counts = np.zeros((N, K + 1, K + 1, K), dtype=np.int64)
    slot = np.broadcast_to(np.arange(N), (B, N))
    np.add.at(counts, (slot, left, right, tokens), 1)
    return CountPrior(counts, K, N)


class CorruptedPrior(PriorModel):
    """Mixes an inner prior with the uniform distribution: ``(1-eps)*p + eps/K``."""

    def __init__(self, inner: PriorModel, epsilon: float):
        if not 0.0 <= epsilon <= 1.0:
            raise UsageError(f"epsilon={epsilon} outside [0, 1]")
        self.inner = inner
        self.epsilon = float(epsilon)
        self.K, self.N = inner.K, inner.N

    def predict_batch(self, tokens) -> np.ndarray:
        tokens = self._check(tokens)
        probs = self.inner.predict_batch(tokens)
        if self.epsilon > 0.0:
            probs = (1.0 - self.epsilon) * probs + self.epsilon / self.K
        return _one_hot_observed(tokens, probs, self.K)


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of ``probs[..., K]`` by inverse CDF."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None] * cdf[..., -1:]
    return np.minimum((cdf <= u).sum(axis=-1), probs.shape[-1] - 1)


def sample_masked_batch(p: PriorModel, tokens: np.ndarray, rng, probs=None):
    """Fill every MASK slot with an independent draw. Returns ``(filled, probs)``."""
    if probs is None:
        probs = p.predict_batch(tokens)
    draws = sample_categorical(probs, rng)
    return np.where(tokens == MASK, draws, tokens), probs


def sample_masked(p: PriorModel, seq: TokenSeq, rng: np.random.Generator) -> TokenSeq:
    if seq.is_complete():
        return seq
    filled, _ = sample_masked_batch(p, seq.as_array()[None, :], rng)
    return TokenSeq.from_array(filled[0], seq.K)
