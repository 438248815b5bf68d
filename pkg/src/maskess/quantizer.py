"""Windowed k-means quantizer standing in for a learned VQ encoder/decoder."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .tokens import MASK, Codebook, TokenSeq, UsageError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VQSpec:
    window: int = 8
    K: int = 16
    iters: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise UsageError("window must be >= 1")
        if self.K < 2:
            raise UsageError("codebook size K must be >= 2")
        if self.iters < 1:
            raise UsageError("iters must be >= 1")


def to_windows(series, window: int, truncate: bool = True) -> np.ndarray:
    """Stack every series into non-overlapping windows of ``window`` samples.

    With ``truncate`` a series whose length is not a multiple of ``window`` is
    right-truncated (with a warning); otherwise that is an error.
    """
    rows = []
    for x in series:
        x = np.asarray(x, dtype=float)
        extra = len(x) % window
        if extra:
            if not truncate:
                raise UsageError(f"series length {len(x)} is not a multiple of window {window}")
            warnings.warn(
                f"series length {len(x)} not divisible by window {window}; "
                f"dropping the last {extra} samples",
                stacklevel=2,
            )
            x = x[: len(x) - extra]
        rows.append(x.reshape(-1, window))
    if not rows:
        return np.empty((0, window))
    return np.concatenate(rows, axis=0)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def _kmeans_pp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(len(X))]]
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(len(X), p=closest / total)
        else:
            idx = rng.integers(len(X))
        centers.append(X[idx])
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans(X: np.ndarray, K: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    C = _kmeans_pp(X, K, rng)
    for _ in range(iters):
        dist = _sq_dists(X, C)
        assign = np.argmin(dist, axis=1)
        new = C.copy()
        sizes = np.bincount(assign, minlength=K)
        for k in range(K):
            if sizes[k]:
                new[k] = X[assign == k].mean(axis=0)
        empty = np.flatnonzero(sizes == 0)
        if len(empty):
            # reseed empty clusters from the points worst served by the current centroids
            worst = np.argsort(-dist[np.arange(len(X)), assign], kind="stable")
            for k, i in zip(empty, worst):
                new[k] = X[i]
        if np.array_equal(new, C):
            break
        C = new
    return C


def _separate_duplicates(C: np.ndarray) -> np.ndarray:
    C = C.copy()
    seen: dict[bytes, int] = {}
    bumped = 0
    for k in range(len(C)):
        key = C[k].tobytes()
        while key in seen:
            bumped += 1
            C[k] = C[k] + 1e-6
            key = C[k].tobytes()
        seen[key] = k
    if bumped:
        warnings.warn(f"{bumped} duplicate codebook rows perturbed by 1e-6", stacklevel=3)
    return C


def fit_codebook(series, spec: VQSpec) -> Codebook:
    X = to_windows(series, spec.window)
    if len(X) < spec.K:
        raise UsageError(f"only {len(X)} windows available for a codebook of size {spec.K}")
    rng = np.random.default_rng(spec.seed)
    C = kmeans(X, spec.K, spec.iters, rng)
    return Codebook(_separate_duplicates(C))


def encode_windows(cb: Codebook, windows: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum, so equidistant rows resolve to the lower index
    return np.argmin(_sq_dists(windows, cb.vectors), axis=1)


def encode_batch(cb: Codebook, series) -> np.ndarray:
    """Token array ``(B, L / window)`` for equal-length series."""
    series = np.asarray(series, dtype=float)
    B, L = series.shape
    if L % cb.D:
        raise UsageError(f"series length {L} is not a multiple of window {cb.D}")
    return encode_windows(cb, series.reshape(-1, cb.D)).reshape(B, L // cb.D)


def encode(cb: Codebook, series) -> TokenSeq:
    x = np.asarray(series, dtype=float)
    if len(x) == 0 or len(x) % cb.D:
        raise UsageError(f"series length {len(x)} is not a positive multiple of window {cb.D}")
    return TokenSeq.from_array(encode_windows(cb, x.reshape(-1, cb.D)), cb.K)


def decode_batch(cb: Codebook, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if np.any(tokens == MASK):
        raise UsageError("cannot decode a sequence containing MASK")
    return cb.lookup(tokens).reshape(len(tokens), -1)


def decode(cb: Codebook, seq) -> np.ndarray:
    tokens = np.asarray(list(seq), dtype=np.int64)
    if tokens.size == 0:
        return np.empty(0)
    if np.any(tokens == MASK):
        raise UsageError("cannot decode a sequence containing MASK")
    return cb.lookup(tokens).reshape(-1)


def reconstruction_mse(cb: Codebook, series) -> float:
    """Mean squared error of ``decode(encode(x))`` over every window of ``series``."""
    X = to_windows(series, cb.D, truncate=False)
    recon = cb.vectors[encode_windows(cb, X)]
    return float(np.mean((X - recon) ** 2))
