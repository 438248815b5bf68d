"""Enumerable joints and helpers for checking samplers against exact answers."""

from __future__ import annotations

import numpy as np

from .prior import TabularExactPrior, enumerate_sequences
from .tokens import Codebook, UsageError


def independent_joint(marginals) -> TabularExactPrior:
    """Product distribution; ``marginals`` is an ``(N, K)`` array of per-slot pmfs."""
    marginals = np.asarray(marginals, dtype=float)
    N, K = marginals.shape
    joint = np.ones(1)
    for row in marginals:
        joint = np.outer(joint, row / row.sum()).reshape(-1)
    return TabularExactPrior(joint, K, N)


def chain_joint(N: int, K: int = 2, coupling: float = 1.5, field=None) -> TabularExactPrior:
    """Potts chain ``p(x) ~ exp(coupling * #{i: x_i == x_(i+1)} + sum_i field[x_i])``."""
    codes = enumerate_sequences(K, N)
    energy = coupling * (codes[:, 1:] == codes[:, :-1]).sum(axis=1).astype(float)
    if field is not None:
        energy = energy + np.asarray(field, dtype=float)[codes].sum(axis=1)
    w = np.exp(energy - energy.max())
    return TabularExactPrior(w / w.sum(), K, N)


def multimodal_joint(modes, K: int, flip: float = 0.05, weights=None) -> TabularExactPrior:
    """Mixture of modes, each slot independently replaced by a uniform token w.p. ``flip``."""
    modes = np.asarray(modes, dtype=np.int64)
    n_modes, N = modes.shape
    weights = np.full(n_modes, 1.0 / n_modes) if weights is None else np.asarray(weights, float)
    codes = enumerate_sequences(K, N)
    stay = 1.0 - flip + flip / K
    move = flip / K
    joint = np.zeros(len(codes))
    for w, mode in zip(weights, modes):
        agree = (codes == mode[None, :]).sum(axis=1)
        joint += w * stay**agree * move ** (N - agree)
    return TabularExactPrior(joint / joint.sum(), K, N)


def one_hot_codebook(K: int, scale: float = 1.0) -> Codebook:
    """Codebook with equidistant rows (pairwise squared distance ``2 * scale**2``)."""
    return Codebook(scale * np.eye(K))


def sequence_index(tokens: np.ndarray, K: int) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if np.any(tokens < 0) or np.any(tokens >= K):
        raise UsageError("empirical distributions need complete sequences")
    N = tokens.shape[1]
    return tokens @ (K ** np.arange(N - 1, -1, -1, dtype=np.int64))


def empirical_distribution(tokens: np.ndarray, K: int) -> np.ndarray:
    """Relative frequency of every one of the ``K**N`` sequences."""
    tokens = np.asarray(tokens)
    N = tokens.shape[1]
    counts = np.bincount(sequence_index(tokens, K), minlength=K**N)
    return counts / max(len(tokens), 1)
