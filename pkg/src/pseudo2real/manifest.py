"""Utterance records and JSON Lines manifest I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable

from .errors import DataError


class ManifestError(DataError):
    code = "manifest"


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    reference: str | None = None
    hypothesis: str | None = None
    word_logprobs: tuple[float, ...] | None = None
    speaker: str | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ManifestError("utterance id must be a non-empty string", code="bad_id")
        if self.word_logprobs is not None:
            lp = tuple(float(x) for x in self.word_logprobs)
            object.__setattr__(self, "word_logprobs", lp)
            if not all(math.isfinite(x) for x in lp):
                raise ManifestError(f"non-finite word_logprobs in {self.id!r}", code="bad_logprobs", id=self.id)
            from .wer import normalize_text

            n_hyp = len(normalize_text(self.hypothesis or ""))
            if len(lp) != n_hyp:
                raise ManifestError(
                    f"{self.id!r}: {len(lp)} word_logprobs for {n_hyp} hypothesis words",
                    code="bad_logprobs",
                    id=self.id,
                )

    @classmethod
    def from_json(cls, obj: dict) -> "UtteranceRecord":
        if not isinstance(obj, dict):
            raise ManifestError("manifest line is not a JSON object", code="bad_line")
        for key in ("reference", "hypothesis", "speaker"):
            if obj.get(key) is not None and not isinstance(obj[key], str):
                raise ManifestError(f"field {key!r} must be a string", code="bad_field")
        lp = obj.get("word_logprobs")
        if lp is not None and (
            not isinstance(lp, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in lp)
        ):
            raise ManifestError("word_logprobs must be a list of numbers", code="bad_field")
        return cls(
            id=obj.get("id"),
            reference=obj.get("reference"),
            hypothesis=obj.get("hypothesis"),
            word_logprobs=None if lp is None else tuple(lp),
            speaker=obj.get("speaker"),
        )

    def to_json(self) -> dict:
        out: dict = {"id": self.id}
        if self.reference is not None:
            out["reference"] = self.reference
        if self.hypothesis is not None:
            out["hypothesis"] = self.hypothesis
        if self.word_logprobs is not None:
            out["word_logprobs"] = list(self.word_logprobs)
        if self.speaker is not None:
            out["speaker"] = self.speaker
        return out


def parse_manifest(lines: Iterable[str]) -> list[UtteranceRecord]:
    records = []
    seen = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})", code="bad_line", line=lineno) from None
        rec = UtteranceRecord.from_json(obj)
        if rec.id in seen:
            raise ManifestError(f"line {lineno}: duplicate id {rec.id!r}", code="duplicate_id", id=rec.id)
        seen.add(rec.id)
        records.append(rec)
    return records


def read_manifest(path) -> list[UtteranceRecord]:
    try:
        with open(path, encoding="utf-8") as f:
            return parse_manifest(f)
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror}", code="io") from None


def dumps_manifest(records: Iterable[UtteranceRecord]) -> str:
    return "".join(json.dumps(r.to_json(), ensure_ascii=False) + "\n" for r in records)


def write_manifest(path, records: Iterable[UtteranceRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_manifest(records))
