"""Masked-token sampling with self-critic reverse/resample correction.

Submodules: ``tokens``, ``schedule``, ``prior``, ``sampler``, ``quantizer``,
``evaluate``, ``data``, ``chains``, ``config`` and ``cli``.
"""

from .prior import CorruptedPrior, CountPrior, TabularExactPrior
from .sampler import (
    RealismTrace,
    SamplerConfig,
    critical_resample,
    critical_reverse,
    ess_sample,
    naive_decode,
    token_critic_decode,
)
from .schedule import MaskSchedule, NoiseSchedule, cosine_mask_counts
from .tokens import MASK, PINNED, Codebook, ConfidenceVector, MaskMatrix, TokenSeq, UsageError

__version__ = "0.1.0"
