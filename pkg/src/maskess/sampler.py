"""Masked iterative samplers and the enhanced sampling scheme built from them.

The ``*_batch`` functions advance ``B`` independent chains at once on a
``(B, N)`` token array and share one RNG; the unsuffixed functions are
single-sequence wrappers over them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .prior import PriorModel, TabularExactPrior, sample_masked_batch
from .schedule import MaskSchedule, NoiseSchedule, cosine_mask_counts, perturb_scores
from .tokens import (
    MASK,
    Codebook,
    ConfidenceVector,
    TokenSeq,
    UsageError,
    keep_top,
    sq_dist_rows,
)

CONFIDENCE_SOURCES = ("self-critic", "prior-prob")


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs for the decoding loops.

    Exactly one reverse-stop rule is active: the threshold ``tau`` or the
    moving-averaged ratio (``use_ratio_stop``). ``T_star`` defaults to ``T``.
    """

    T: int = 10
    T_star: int | None = None
    tau: float | None = None
    use_ratio_stop: bool = True
    ratio_window: int = 2
    noise_base: float = 1.0
    seed: int = 0
    stage3_confidence: str = "self-critic"

    def __post_init__(self):
        if self.T < 1:
            raise UsageError("T must be >= 1")
        if self.T_star is None:
            object.__setattr__(self, "T_star", self.T)
        if self.T_star < 1:
            raise UsageError("T_star must be >= 1")
        if (self.tau is not None) == self.use_ratio_stop:
            raise UsageError("enable exactly one of tau and use_ratio_stop")
        if self.tau is not None and self.tau < 0:
            raise UsageError("tau must be non-negative")
        if self.ratio_window < 1:
            raise UsageError("ratio_window must be >= 1")
        if self.noise_base < 0:
            raise UsageError("noise_base must be non-negative")
        if self.stage3_confidence not in CONFIDENCE_SOURCES:
            raise UsageError(f"stage3_confidence must be one of {CONFIDENCE_SOURCES}")

    @property
    def noise(self) -> NoiseSchedule:
        return NoiseSchedule(self.noise_base, self.T)

    def with_tau(self, tau: float) -> "SamplerConfig":
        return replace(self, tau=tau, use_ratio_stop=False)


class CriticFn:
    """Scores every slot of a complete sequence with a realism value in [0, 1]."""

    def score_batch(self, tokens: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def score(self, seq: TokenSeq) -> ConfidenceVector:
        scores = self.score_batch(seq.as_array()[None, :])[0]
        return ConfidenceVector(scores, "external-critic")


class ConditionalCritic(CriticFn):
    """``p(s_i | s_{-i})`` under a reference prior.

    With a :class:`TabularExactPrior` of the true joint this is the exact
    oracle critic.
    """

    def __init__(self, prior: PriorModel):
        self.prior = prior

    def score_batch(self, tokens):
        tokens = np.asarray(tokens)
        out = np.empty(tokens.shape)
        rows = np.arange(len(tokens))
        for j in range(tokens.shape[1]):
            masked = tokens.copy()
            masked[:, j] = MASK
            out[:, j] = self.prior.predict_batch(masked)[rows, j, tokens[:, j]]
        return out


def oracle_critic(joint: TabularExactPrior) -> ConditionalCritic:
    return ConditionalCritic(joint)


@dataclass
class RealismTrace:
    """Sum of self-critic ``d`` values at each step boundary of one chain."""

    steps: list[tuple[str, int, float]] = field(default_factory=list)

    PHASES = ("naive", "reverse", "resample")

    def add(self, phase: str, step: int, value: float) -> None:
        self.steps.append((phase, int(step), float(value)))

    def phase(self, name: str) -> list[tuple[int, float]]:
        return [(s, v) for p, s, v in self.steps if p == name]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(["phase", "step", "realism_sum"])
        for phase, step, value in self.steps:
            writer.writerow([phase, step, repr(value)])
        return buf.getvalue()


# self-critic


def self_critic_batch(p: PriorModel, cb: Codebook, tokens: np.ndarray):
    """Self-Token-Critic confidence for complete sequences.

    Slot ``j`` is masked on its own, the prior's most likely token there is
    found, and ``d_j`` is minus the squared latent distance between the sampled
    and most likely tokens. Returns ``(C, d)`` with ``C = softmax(d)`` per row.
    """
    tokens = np.asarray(tokens)
    if np.any(tokens == MASK):
        raise UsageError("self-critic needs MASK-free sequences")
    d = np.empty(tokens.shape)
    for j in range(tokens.shape[1]):
        masked = tokens.copy()
        masked[:, j] = MASK
        best = np.argmax(p.predict_batch(masked)[:, j, :], axis=-1)
        d[:, j] = -sq_dist_rows(cb, tokens[:, j], best)
    e = np.exp(d - d.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True), d


def self_critic_confidence(p: PriorModel, cb: Codebook, seq: TokenSeq):
    C, d = self_critic_batch(p, cb, seq.as_array()[None, :])
    return ConfidenceVector(C[0], "self-critic"), d[0].tolist()


def _realism(p, cb, tokens) -> np.ndarray:
    return self_critic_batch(p, cb, tokens)[1].sum(axis=1)


def _record(traces, phase, step, values, chains=None):
    if traces is None:
        return
    chains = range(len(values)) if chains is None else chains
    for c, v in zip(chains, values):
        traces[c].add(phase, step, v)


# stage 1 and the Token-Critic baseline


def naive_decode_batch(
    p: PriorModel,
    sched: MaskSchedule,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    B: int,
    *,
    cb: Codebook | None = None,
    traces: list[RealismTrace] | None = None,
):
    """MaskGIT iterative decoding from all-MASK over ``sched.T`` steps.

    Confidence is the prior probability of each sampled token; slots kept at
    an earlier step are pinned and never resampled. Returns the complete
    tokens and the final step's ``(scores, pinned)``.
    """
    N, T = sched.N, sched.T
    noise = cfg.noise.rescaled(T)
    tokens = np.full((B, N), MASK, dtype=np.int64)
    rows = np.arange(B)[:, None]
    for t in range(T):
        sampled, probs = sample_masked_batch(p, tokens, rng)
        pinned = tokens != MASK
        raw = probs[rows, np.arange(N)[None, :], sampled]
        scores = perturb_scores(raw, pinned, t, noise, rng)
        if traces is not None:
            _record(traces, "naive", t, _realism(p, cb, sampled))
        tokens = np.where(keep_top(scores, sched.keep(t + 1), pinned), sampled, MASK)
    return tokens, raw, pinned


def naive_decode(p, sched, cfg, rng):
    tokens, raw, pinned = naive_decode_batch(p, sched, cfg, rng, 1)
    return TokenSeq.from_array(tokens[0], p.K), ConfidenceVector(raw[0], "prior-prob", pinned[0])


def token_critic_decode_batch(p, critic: CriticFn, sched, cfg, rng, B):
    """Iterative decoding ranked by an external critic, with no pinning."""
    N, T = sched.N, sched.T
    noise = cfg.noise.rescaled(T)
    tokens = np.full((B, N), MASK, dtype=np.int64)
    for t in range(T):
        sampled, _ = sample_masked_batch(p, tokens, rng)
        scores = perturb_scores(critic.score_batch(sampled), None, t, noise, rng)
        tokens = np.where(keep_top(scores, sched.keep(t + 1)), sampled, MASK)
    return tokens


def token_critic_decode(p, critic, sched, cfg, rng) -> TokenSeq:
    return TokenSeq.from_array(token_critic_decode_batch(p, critic, sched, cfg, rng, 1)[0], p.K)


# stage 2


def critical_reverse_batch(
    p: PriorModel,
    cb: Codebook,
    s_T: np.ndarray,
    sched: MaskSchedule,
    cfg: SamplerConfig,
    *,
    traces: list[RealismTrace] | None = None,
):
    """Retract decoding from ``T`` until newly revealed tokens match the prior.

    Returns ``(t_star, s_tstar, C, d)`` where ``s_tstar`` keeps the
    ``N - counts[t_star]`` most confident slots of ``s_T``.
    """
    s_T = np.asarray(s_T)
    B, N = s_T.shape
    T = sched.T
    C, d = self_critic_batch(p, cb, s_T)
    t_star = np.ones(B, dtype=np.int64)
    active = np.ones(B, dtype=bool)
    prev = np.full(B, np.nan)
    ratios: list[list[float]] = [[] for _ in range(B)]
    _record(traces, "reverse", T, d.sum(axis=1))

    for t in range(T, 0, -1):
        if not active.any():
            break
        kept_t = keep_top(C, sched.keep(t))
        kept_prev = keep_top(C, sched.keep(t - 1))
        revealed = kept_t & ~kept_prev
        if not revealed.any():
            # schedule plateau carries no evidence
            if t > 1:
                still = np.flatnonzero(active)
                _record(traces, "reverse", t - 1, (d[still] * kept_prev[still]).sum(axis=1), still)
            continue
        idx = np.flatnonzero(active)
        s_prev = np.where(kept_prev[idx], s_T[idx], MASK)
        best = np.argmax(p.predict_batch(s_prev), axis=-1)
        sq = sq_dist_rows(cb, s_T[idx], best)
        rev = revealed[idx]
        mean = (sq * rev).sum(axis=1) / (rev.sum(axis=1) * cb.D)

        if cfg.tau is not None:
            stop = mean <= cfg.tau
        else:
            # ratio of the previous difference to the current one; large while
            # unlikely tokens are still being peeled off
            stop = mean <= 0.0
            for k, c in enumerate(idx):
                if np.isfinite(prev[c]) and mean[k] > 0.0:
                    ratios[c].append(prev[c] / mean[k])
                    if np.mean(ratios[c][-cfg.ratio_window :]) <= 1.0:
                        stop[k] = True
            prev[idx] = mean

        done = idx[stop]
        t_star[done] = t
        active[done] = False
        if traces is not None and t > 1:
            # reverse-phase realism counts only slots still unmasked at t - 1
            still = idx[~stop]
            _record(traces, "reverse", t - 1, (d[still] * kept_prev[still]).sum(axis=1), still)

    kept = keep_top(C, N - np.asarray(sched.counts)[t_star])
    return t_star, np.where(kept, s_T, MASK), C, d


def critical_reverse(p, cb, s_T: TokenSeq, sched, cfg, rng=None):
    if not s_T.is_complete():
        raise UsageError("critical reverse sampling starts from a MASK-free sequence")
    t_star, s, _, _ = critical_reverse_batch(p, cb, s_T.as_array()[None, :], sched, cfg)
    return int(t_star[0]), TokenSeq.from_array(s[0], s_T.K)


# stage 3


def _resample_group(p, cb, tokens, t_star, cfg, rng, confidence, traces, chains):
    B, N = tokens.shape
    masked = int((tokens[0] == MASK).sum())
    if masked == 0:
        if traces is not None:
            _record(traces, "resample", cfg.T_star, _realism(p, cb, tokens), chains)
        return tokens
    L = max(cfg.T_star - t_star, 1)
    counts = cosine_mask_counts(masked, L).counts
    noise = cfg.noise.rescaled(L)
    rows = np.arange(B)[:, None]
    for k in range(L):
        sampled, probs = sample_masked_batch(p, tokens, rng)
        d = None
        if confidence == "self-critic":
            scores, d = self_critic_batch(p, cb, sampled)
            pinned = None
        else:
            scores = probs[rows, np.arange(N)[None, :], sampled]
            pinned = tokens != MASK
        if traces is not None:
            if d is None:
                d = self_critic_batch(p, cb, sampled)[1]
            _record(traces, "resample", t_star + k, d.sum(axis=1), chains)
        scores = perturb_scores(scores, pinned, k, noise, rng)
        tokens = np.where(keep_top(scores, N - counts[k + 1], pinned), sampled, MASK)
    if traces is not None:
        _record(traces, "resample", t_star + L, _realism(p, cb, tokens), chains)
    return tokens


def critical_resample_batch(
    p: PriorModel,
    cb: Codebook,
    t_star: np.ndarray,
    tokens: np.ndarray,
    sched: MaskSchedule,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    *,
    confidence: str | None = None,
    traces: list[RealismTrace] | None = None,
):
    """Re-decode masked slots from ``t_star`` up to ``cfg.T_star``.

    Each group of chains sharing a ``t_star`` gets a cosine schedule re-derived
    over its remaining steps. With self-critic confidence nothing is pinned,
    so any slot may be masked again; ``confidence="prior-prob"`` falls back to
    plain iterative decoding (pinned, prior-probability ranked).
    """
    confidence = confidence or cfg.stage3_confidence
    if confidence not in CONFIDENCE_SOURCES:
        raise UsageError(f"unknown confidence source {confidence!r}")
    t_star = np.asarray(t_star)
    out = np.array(tokens, dtype=np.int64, copy=True)
    for ts in np.unique(t_star):
        chains = np.flatnonzero(t_star == ts)
        out[chains] = _resample_group(
            p, cb, out[chains], int(ts), cfg, rng, confidence, traces, chains
        )
    return out


def critical_resample(p, cb, start, sched, cfg, rng, confidence=None) -> TokenSeq:
    t_star, seq = start
    out = critical_resample_batch(
        p, cb, np.array([t_star]), seq.as_array()[None, :], sched, cfg, rng, confidence=confidence
    )
    return TokenSeq.from_array(out[0], seq.K)


# pipelines


def ess_sample_batch(p, cb, sched, cfg, rng, B, *, confidence=None, traces=None):
    """Naive decoding, then critical reverse sampling, then critical resampling."""
    s_T, _, _ = naive_decode_batch(p, sched, cfg, rng, B, cb=cb, traces=traces)
    t_star, s_star, _, _ = critical_reverse_batch(p, cb, s_T, sched, cfg, traces=traces)
    out = critical_resample_batch(
        p, cb, t_star, s_star, sched, cfg, rng, confidence=confidence, traces=traces
    )
    return out, t_star


def ess_sample(p, cb, sched, cfg, rng):
    trace = RealismTrace()
    out, _ = ess_sample_batch(p, cb, sched, cfg, rng, 1, traces=[trace])
    return TokenSeq.from_array(out[0], p.K), trace


def resample_only_batch(p, cb, sched, cfg, rng, B):
    """Critical resampling straight from all-MASK, skipping naive decoding."""
    tokens = np.full((B, sched.N), MASK, dtype=np.int64)
    return critical_resample_batch(
        p, cb, np.zeros(B, dtype=np.int64), tokens, sched, cfg, rng, confidence="self-critic"
    )
