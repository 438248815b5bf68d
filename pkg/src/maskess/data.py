"""UCR-format loading and writing, z-normalisation and synthetic corpora."""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .tokens import UsageError

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed data file; the message names the offending line."""


class LabeledSeries(NamedTuple):
    label: int
    values: np.ndarray


def _parse_label(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        return None
    return int(value) if math.isfinite(value) and value == int(value) else None


def load_ucr_tsv(path) -> list[LabeledSeries]:
    """Read a UCR archive file: one series per line, label first, tab-separated.

    Trailing ``NaN`` padding is stripped. Labels that are not integers are
    mapped to 0, 1, ... in order of first appearance.
    """
    raw_labels, values = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\r\n").split("\t")
            try:
                x = np.array([float(v) for v in fields[1:]], dtype=float)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric value ({exc})") from None
            n = len(x)
            while n and np.isnan(x[n - 1]):
                n -= 1
            x = x[:n]
            if n == 0:
                raise ParseError(f"{path}:{lineno}: series has no values")
            if np.isnan(x).any():
                raise ParseError(f"{path}:{lineno}: missing value inside the series")
            raw_labels.append(fields[0].strip())
            values.append(x)
    if not values:
        raise ParseError(f"{path}: no series found")

    parsed = [_parse_label(s) for s in raw_labels]
    if any(p is None for p in parsed):
        mapping: dict[str, int] = {}
        parsed = [mapping.setdefault(s, len(mapping)) for s in raw_labels]
    return [LabeledSeries(lab, x) for lab, x in zip(parsed, values)]


def write_ucr_tsv(path, series) -> None:
    lines = []
    for label, x in series:
        lines.append("\t".join([str(int(label))] + [repr(float(v)) for v in x]))
    Path(path).write_text("".join(line + "\n" for line in lines))


def znormalize(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise UsageError("cannot normalise an empty series")
    std = x.std()
    if std < 1e-12:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def truncate_to_min_length(series: list[LabeledSeries]) -> list[LabeledSeries]:
    """Cut every series to the shortest length in the set."""
    if not series:
        return []
    shortest = min(len(s.values) for s in series)
    if any(len(s.values) != shortest for s in series):
        log.warning("variable-length data: truncating all series to %d samples", shortest)
    return [LabeledSeries(s.label, s.values[:shortest]) for s in series]


# synthetic corpora


def _sine_mix(i, length, rng):
    # label is the number of cycles over the series
    cycles = (1, 3)[i % 2]
    t = np.arange(length) / length
    phase = rng.uniform(0, 2 * np.pi)
    x = np.sin(2 * np.pi * cycles * t + phase) + 0.1 * rng.standard_normal(length)
    return cycles, x


def _cbf(i, length, rng):
    # Saito's cylinder-bell-funnel shapes, rescaled to ``length``
    label = i % 3
    a = int(rng.integers(length // 8, length // 4 + 1))
    b = a + int(rng.integers(length // 4, 3 * length // 4 + 1))
    b = min(b, length - 1)
    t = np.arange(length)
    inside = (t >= a) & (t <= b)
    height = 6.0 + rng.standard_normal()
    if label == 0:
        shape = inside * 1.0
    elif label == 1:
        shape = inside * (t - a) / max(b - a, 1)
    else:
        shape = inside * (b - t) / max(b - a, 1)
    return label, height * shape + rng.standard_normal(length)


def _step(i, length, rng):
    label = i % 2
    at = int(rng.integers(length // 4, 3 * length // 4 + 1))
    x = np.where(np.arange(length) < at, -1.0, 1.0)
    if label == 1:
        x = -x
    return label, x + 0.1 * rng.standard_normal(length)


SYNTHETIC_KINDS = {"sine-mix": _sine_mix, "cbf": _cbf, "step": _step}


def gen_synthetic(kind: str, n: int, length: int, seed: int = 0) -> list[LabeledSeries]:
    """Deterministic labelled corpus; classes are assigned round-robin.

    - ``sine-mix``: ``sin(2*pi*c*t + phase) + 0.1*noise`` with ``c`` in {1, 3}
      cycles; the label is ``c``.
    - ``cbf``: cylinder (0), bell (1) and funnel (2) plateaus of height
      ``6 + N(0,1)`` on a random interval, plus unit Gaussian noise.
    - ``step``: a level switch between -1 and +1 at a random point in the
      middle half; label 0 steps up, label 1 steps down; noise sigma 0.1.
    """
    if kind not in SYNTHETIC_KINDS:
        raise UsageError(f"unknown synthetic kind {kind!r}; choose from {sorted(SYNTHETIC_KINDS)}")
    if length < 8:
        raise UsageError("synthetic series need length >= 8")
    rng = np.random.default_rng(seed)
    make = SYNTHETIC_KINDS[kind]
    out = []
    for i in range(n):
        label, x = make(i, length, rng)
        out.append(LabeledSeries(label, x))
    return out
