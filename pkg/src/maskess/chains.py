"""Fan sampling chains out over workers without letting worker count change results.

Chains are cut into fixed-size blocks. Block ``b`` draws from its own
generator seeded by ``SeedSequence(root_seed, spawn_key=(b,))``, so a block's
output depends only on the root seed and its index. Blocks are gathered in
index order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import sampler as S
from .prior import PriorModel
from .schedule import MaskSchedule
from .tokens import Codebook, UsageError

CHAIN_BLOCK = 1024

METHODS = ("naive", "tokencritic", "ess", "ablation-b")
# resample-only is a test configuration for the diversity check, not a user-facing method
HIDDEN_METHODS = ("resample-only",)


def block_rng(root_seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=(block,)))


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("MS_THREADS")
    return max(1, int(env)) if env else 1


@dataclass
class ChainResult:
    tokens: np.ndarray
    t_star: np.ndarray | None = None
    traces: list | None = None


def _run_block(method, p, cb, sched, cfg, critic, rng, B, trace):
    traces = [S.RealismTrace() for _ in range(B)] if trace else None
    if method == "naive":
        return S.naive_decode_batch(p, sched, cfg, rng, B, cb=cb, traces=traces)[0], None, traces
    if method == "tokencritic":
        if critic is None:
            raise UsageError("tokencritic sampling needs a critic")
        return S.token_critic_decode_batch(p, critic, sched, cfg, rng, B), None, traces
    if method in ("ess", "ablation-b"):
        confidence = "prior-prob" if method == "ablation-b" else cfg.stage3_confidence
        tokens, t_star = S.ess_sample_batch(
            p, cb, sched, cfg, rng, B, confidence=confidence, traces=traces
        )
        return tokens, t_star, traces
    if method == "resample-only":
        return S.resample_only_batch(p, cb, sched, cfg, rng, B), None, traces
    raise UsageError(f"unknown sampling method {method!r}")


def run_chains(
    method: str,
    p: PriorModel,
    cb: Codebook,
    sched: MaskSchedule,
    cfg: S.SamplerConfig,
    n: int,
    *,
    critic: S.CriticFn | None = None,
    workers: int | None = None,
    trace: bool = False,
    block: int = CHAIN_BLOCK,
) -> ChainResult:
    """Draw ``n`` samples with ``method`` using root seed ``cfg.seed``."""
    if method not in METHODS + HIDDEN_METHODS:
        raise UsageError(f"unknown sampling method {method!r}")
    if n < 0:
        raise UsageError("number of samples must be non-negative")
    sizes = [min(block, n - lo) for lo in range(0, n, block)]

    def job(b):
        return _run_block(method, p, cb, sched, cfg, critic, block_rng(cfg.seed, b), sizes[b], trace)

    nworkers = worker_count(workers)
    if nworkers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=nworkers) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]

    if not parts:
        return ChainResult(np.empty((0, sched.N), dtype=np.int64), None, [] if trace else None)
    tokens = np.concatenate([t for t, _, _ in parts])
    t_star = None
    if parts[0][1] is not None:
        t_star = np.concatenate([ts for _, ts, _ in parts])
    traces = [tr for _, _, trs in parts for tr in trs] if trace else None
    return ChainResult(tokens, t_star, traces)
