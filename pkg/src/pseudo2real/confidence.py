"""Confidence scoring and quartile filtering of pseudo-labelled utterances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import DataError
from .manifest import UtteranceRecord

QUARTILES = {"Q1": 0.25, "Q2": 0.5, "Q3": 0.75}


class MissingConfidenceError(DataError):
    code = "missing_confidence"


@dataclass(frozen=True)
class ConfidenceRecord:
    id: str
    score: float


@dataclass(frozen=True)
class FilterResult:
    level: str
    threshold: float
    kept: frozenset[str]
    total: int

    @property
    def keep_rate(self) -> float:
        return len(self.kept) / self.total


def confidence_score(r: UtteranceRecord) -> ConfidenceRecord:
    """Mean per-word log-probability of the hypothesis."""
    if not r.word_logprobs:
        raise MissingConfidenceError(f"record {r.id!r} has no word_logprobs", id=r.id)
    score = math.fsum(r.word_logprobs) / len(r.word_logprobs)
    return ConfidenceRecord(r.id, score)


def quantile(values: Sequence[float], q: float) -> float:
    """Quantile by linear interpolation between closest ranks: position
    ``(n - 1) * q`` in the sorted values."""
    xs = sorted(values)
    pos = (len(xs) - 1) * q
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    frac = pos - lo
    if frac == 0.0 or xs[lo] == xs[hi]:
        return xs[lo]
    # clamp: rounding must not push the threshold past the upper neighbour
    return min(max(xs[lo] + (xs[hi] - xs[lo]) * frac, xs[lo]), xs[hi])


def quartile_filter(records: Sequence[ConfidenceRecord], level: str) -> FilterResult:
    """Keep records scoring at or above the chosen quartile of the scores."""
    if level not in QUARTILES:
        raise DataError(f"unknown quartile level {level!r}; expected Q1, Q2 or Q3", code="bad_level")
    if not records:
        raise DataError("cannot filter an empty record list", code="empty")
    threshold = quantile([r.score for r in records], QUARTILES[level])
    kept = frozenset(r.id for r in records if r.score >= threshold)
    return FilterResult(level, threshold, kept, len(records))
