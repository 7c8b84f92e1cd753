"""Grid search over the correction scale, scored by dev-set WER."""

from __future__ import annotations

import math
import os
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from .errors import BackendError, DataError, P2RError
from .manifest import UtteranceRecord, parse_manifest, read_manifest, write_manifest
from .task_arithmetic import apply
from .tensor_store import TensorMap, write_archive
from .wer import corpus_wer, join_refs_hyps

DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))


@dataclass(frozen=True)
class LambdaGrid:
    values: tuple[float, ...] = DEFAULT_GRID

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise DataError("lambda grid is empty", code="bad_grid")
        if not all(math.isfinite(v) for v in vals):
            raise DataError("lambda grid has non-finite values", code="bad_grid")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise DataError("lambda grid must be strictly increasing", code="bad_grid")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "LambdaGrid":
        """Build a grid from any ordering of distinct values."""
        return cls(tuple(sorted(float(v) for v in values)))

    @classmethod
    def parse(cls, spec: str) -> "LambdaGrid":
        """Parse ``start:stop:step`` (stop inclusive) or a comma list."""
        try:
            if ":" in spec:
                start, stop, step = (float(p) for p in spec.split(":"))
                if step <= 0 or stop < start:
                    raise ValueError
                n = int(math.floor((stop - start) / step + 1e-9)) + 1
                return cls(tuple(round(start + i * step, 10) for i in range(n)))
            return cls.from_values([float(p) for p in spec.split(",") if p.strip()])
        except ValueError:
            raise DataError(f"cannot parse lambda grid {spec!r}", code="bad_grid") from None

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class LambdaSearchResult:
    evaluated: list[tuple[float, float]]
    chosen: float
    chosen_wer: float

    def to_json(self) -> dict:
        return {
            "evaluated": [{"lambda": lam, "wer": w} for lam, w in self.evaluated],
            "chosen": self.chosen,
            "chosen_wer": self.chosen_wer,
        }


class LambdaSearchError(P2RError):
    """An evaluation failed; ``partial`` holds the points scored before it."""

    code = "lambda_search"

    def __init__(self, lam, cause: Exception, partial):
        super().__init__(
            f"evaluation failed at lambda={lam}: {cause}",
            failed_lambda=lam,
            partial=[{"lambda": a, "wer": w} for a, w in partial],
            cause=getattr(cause, "code", type(cause).__name__),
        )
        self.failed_lambda = lam
        self.partial = list(partial)
        self.exit_code = getattr(cause, "exit_code", 3)


def grid_search(
    grid: LambdaGrid,
    evaluator: Callable[[float], float],
    threads: int = 1,
) -> LambdaSearchResult:
    """Evaluate every grid value once, ascending, and return the argmin.

    Ties go to the smallest lambda. With ``threads > 1`` points are
    evaluated concurrently; the result is the same as sequential order.
    """
    values = grid.values
    outcomes: list[tuple[float, BaseException | None]] = []
    if threads > 1:
        def safe(lam):
            try:
                return float(evaluator(lam)), None
            except Exception as exc:  # noqa: BLE001 - re-raised below in grid order
                return math.nan, exc

        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(safe, values))
    else:
        for lam in values:
            try:
                outcomes.append((float(evaluator(lam)), None))
            except Exception as exc:  # noqa: BLE001
                outcomes.append((math.nan, exc))
                break

    trace: list[tuple[float, float]] = []
    for lam, (w, exc) in zip(values, outcomes):
        if exc is not None:
            raise LambdaSearchError(lam, exc, trace) from exc
        trace.append((lam, w))
    best = 0
    for i, (_, w) in enumerate(trace):
        if w < trace[best][1]:
            best = i
    return LambdaSearchResult(trace, trace[best][0], trace[best][1])


class TranscriptionBackend(Protocol):
    def transcribe(
        self, model: TensorMap, lam: float, dev_refs: Sequence[UtteranceRecord]
    ) -> list[UtteranceRecord]: ...


class MissingHypothesesError(BackendError):
    code = "missing_hypotheses"


def hyp_filename(lam: float) -> str:
    return f"hyp_{lam:.1f}.jsonl"


@dataclass
class PrecomputedBackend:
    """Reads ``hyp_<lambda>.jsonl`` files produced ahead of time."""

    directory: str

    def transcribe(self, model, lam, dev_refs):
        path = os.path.join(self.directory, hyp_filename(lam))
        if not os.path.isfile(path):
            raise MissingHypothesesError(f"missing_hypotheses({lam:.1f}): {path} not found", **{"lambda": lam})
        try:
            return read_manifest(path)
        except DataError as exc:
            raise BackendError(f"malformed hypotheses in {path}: {exc}", code="malformed_hypotheses") from None


@dataclass
class CommandBackend:
    """Runs an external transcriber once per lambda.

    ``template`` is split shell-style; ``{checkpoint}``, ``{manifest}`` and
    ``{lambda}`` are substituted inside each argument. The command must
    print a hypotheses JSONL manifest on stdout.
    """

    template: str
    timeout: float | None = None
    workdir: str | None = None
    _argv: list[str] = field(init=False, repr=False)

    def __post_init__(self):
        try:
            self._argv = shlex.split(self.template)
        except ValueError as exc:
            raise DataError(f"bad command template: {exc}", code="bad_template") from None
        if not self._argv:
            raise DataError("empty command template", code="bad_template")

    def transcribe(self, model, lam, dev_refs):
        with tempfile.TemporaryDirectory(prefix="p2r_", dir=self.workdir) as tmp:
            ckpt = os.path.join(tmp, "checkpoint.tva")
            manifest = os.path.join(tmp, "dev.jsonl")
            write_archive(ckpt, model)
            write_manifest(manifest, [UtteranceRecord(r.id, speaker=r.speaker) for r in dev_refs])
            subs = {"{checkpoint}": ckpt, "{manifest}": manifest, "{lambda}": repr(float(lam))}
            argv = []
            for tok in self._argv:
                for key, val in subs.items():
                    tok = tok.replace(key, val)
                argv.append(tok)
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout, check=False)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise BackendError(f"backend command failed to run at lambda={lam}: {exc}", code="backend_exec") from None
        if proc.returncode != 0:
            raise BackendError(
                f"backend exited with status {proc.returncode} at lambda={lam}",
                code="backend_exit",
                status=proc.returncode,
                stderr=proc.stderr[-2000:],
            )
        try:
            return parse_manifest(proc.stdout.splitlines())
        except DataError as exc:
            raise BackendError(f"malformed hypotheses at lambda={lam}: {exc}", code="malformed_hypotheses") from None


def checkpoint_evaluator(
    base: TensorMap,
    v: TensorMap,
    dev_refs: Sequence[UtteranceRecord],
    backend: TranscriptionBackend,
    normalize: bool = True,
) -> Callable[[float], float]:
    """Return ``lam -> corpus WER`` of ``apply(base, v, lam)`` on ``dev_refs``."""
    if not dev_refs:
        raise DataError("dev reference manifest is empty", code="empty")
    # fail on incompatibility before the first backend call
    apply(base, v, 0.0)

    def evaluate(lam: float) -> float:
        model = apply(base, v, lam)
        hyps = backend.transcribe(model, lam, dev_refs)
        try:
            joined = join_refs_hyps(dev_refs, hyps)
        except DataError as exc:
            raise BackendError(f"hypotheses for lambda={lam} do not match dev ids: {exc}", code="malformed_hypotheses") from None
        return corpus_wer(joined, normalize=normalize).corpus_wer

    return evaluate
