"""Word error rate by minimal edit-distance alignment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import DataError
from .manifest import UtteranceRecord

_PUNCT_DELETE = str.maketrans({c: None for c in ".,!?;:\"'()[]{}"} | {"-": " "})


def normalize_text(s: str, lowercase: bool = True, strip_punct: bool = True) -> list[str]:
    """Tokenize a transcript on whitespace.

    >>> normalize_text("The cat, sat.")
    ['the', 'cat', 'sat']
    >>> normalize_text("four-needle telegraph")
    ['four', 'needle', 'telegraph']
    """
    if lowercase:
        s = s.lower()
    if strip_punct:
        s = s.translate(_PUNCT_DELETE)
    return s.split()


@dataclass(frozen=True)
class EditCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    hits: int = 0

    @property
    def ref_len(self) -> int:
        return self.hits + self.substitutions + self.deletions

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.hits + other.hits,
        )

    def to_json(self) -> dict:
        return {
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "hits": self.hits,
            "ref_len": self.ref_len,
        }


@dataclass(frozen=True)
class Alignment:
    counts: EditCounts
    # (op, ref_token, hyp_token); op in {"=", "S", "D", "I"}
    trace: list[tuple[str, str | None, str | None]]


def align(ref: Sequence[str], hyp: Sequence[str]) -> Alignment:
    """Unit-cost Levenshtein alignment of two token lists.

    Among minimal alignments the backtrace prefers, at every cell, the
    diagonal move (hit or substitution), then deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    cost = [[j for j in range(m + 1)]] + [[i] + [0] * m for i in range(1, n + 1)]
    for i in range(1, n + 1):
        r = ref[i - 1]
        row, prev = cost[i], cost[i - 1]
        for j in range(1, m + 1):
            row[j] = min(
                prev[j - 1] + (r != hyp[j - 1]),
                prev[j] + 1,
                row[j - 1] + 1,
            )

    trace = []
    s = d = ins = h = 0
    i, j = n, m
    while i > 0 or j > 0:
        c = cost[i][j]
        if i > 0 and j > 0 and c == cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] == hyp[j - 1]:
                trace.append(("=", ref[i - 1], hyp[j - 1]))
                h += 1
            else:
                trace.append(("S", ref[i - 1], hyp[j - 1]))
                s += 1
            i, j = i - 1, j - 1
        elif i > 0 and c == cost[i - 1][j] + 1:
            trace.append(("D", ref[i - 1], None))
            d += 1
            i -= 1
        else:
            trace.append(("I", None, hyp[j - 1]))
            ins += 1
            j -= 1
    trace.reverse()
    return Alignment(EditCounts(s, d, ins, h), trace)


@dataclass(frozen=True)
class UtteranceScore:
    id: str
    counts: EditCounts
    wer: float


@dataclass(frozen=True)
class WerReport:
    per_utterance: list[UtteranceScore] = field(default_factory=list)
    corpus: EditCounts = EditCounts()

    @property
    def corpus_wer(self) -> float:
        return self.corpus.errors / self.corpus.ref_len

    def to_json(self) -> dict:
        return {
            "corpus_wer": self.corpus_wer,
            "corpus": self.corpus.to_json(),
            "num_utterances": len(self.per_utterance),
            "per_utterance": [
                {"id": u.id, **u.counts.to_json(), "wer": u.wer} for u in self.per_utterance
            ],
        }


def utterance_wer(counts: EditCounts) -> float:
    return counts.errors / max(counts.ref_len, 1)


def score_pairs(pairs: Sequence[tuple[str, Sequence[str], Sequence[str]]]) -> WerReport:
    """Score pre-tokenized ``(id, ref_tokens, hyp_tokens)`` triples."""
    if not pairs:
        raise DataError("no utterances to score", code="empty")
    per = []
    total = EditCounts()
    for uid, ref, hyp in pairs:
        c = align(ref, hyp).counts
        per.append(UtteranceScore(uid, c, utterance_wer(c)))
        total = total + c
    if total.ref_len == 0:
        raise DataError("all references are empty; corpus WER undefined", code="empty_reference")
    return WerReport(per, total)


def corpus_wer(records: Sequence[UtteranceRecord], normalize: bool = True) -> WerReport:
    pairs = []
    for r in records:
        if r.reference is None or r.hypothesis is None:
            raise DataError(f"record {r.id!r} lacks reference or hypothesis", code="incomplete_record", id=r.id)
        pairs.append(
            (
                r.id,
                normalize_text(r.reference, normalize, normalize),
                normalize_text(r.hypothesis, normalize, normalize),
            )
        )
    return score_pairs(pairs)


def join_refs_hyps(
    refs: Sequence[UtteranceRecord],
    hyps: Sequence[UtteranceRecord],
    allow_missing: bool = False,
) -> list[UtteranceRecord]:
    """Pair reference and hypothesis manifests by id, in reference order.

    Ids present on only one side raise unless ``allow_missing``, in which
    case they are dropped.
    """
    hyp_by_id = {h.id: h for h in hyps}
    ref_ids = {r.id for r in refs}
    missing_hyp = [r.id for r in refs if r.id not in hyp_by_id]
    missing_ref = [h.id for h in hyps if h.id not in ref_ids]
    if (missing_hyp or missing_ref) and not allow_missing:
        raise DataError(
            f"{len(missing_hyp)} reference ids without hypothesis, {len(missing_ref)} hypothesis ids without reference",
            code="unmatched_ids",
            missing_hypothesis=missing_hyp[:20],
            missing_reference=missing_ref[:20],
        )
    out = []
    for r in refs:
        h = hyp_by_id.get(r.id)
        if h is None:
            continue
        out.append(
            UtteranceRecord(
                id=r.id,
                reference=r.reference,
                hypothesis=h.hypothesis,
                word_logprobs=h.word_logprobs,
                speaker=r.speaker if r.speaker is not None else h.speaker,
            )
        )
    if not out:
        raise DataError("no utterance ids in common", code="unmatched_ids")
    return out
