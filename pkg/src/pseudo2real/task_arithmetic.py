"""Correction-vector arithmetic on tensor maps.

    tau       = theta_real - theta_pseudo               (diff)
    corrected = theta_target_pseudo + lam * tau         (apply)
    tau_bar   = (1/C) * sum_c tau_c                     (average)

Arithmetic runs in float64 and is rounded once to float32 per element, so
results depend only on the inputs, never on tensor iteration or threading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ComputationError, DataError
from .tensor_store import Role, TensorMap, validate_compat


class IncompatibleError(DataError):
    code = "incompatible"

    def __init__(self, message, report):
        super().__init__(message, mismatches=report.to_json()["mismatches"])
        self.report = report


class NonFiniteError(ComputationError):
    code = "non_finite"


class TaskVector(TensorMap):
    """A parameter difference. ``provenance`` records the shape summaries of
    the minuend and subtrahend it was computed from, when known."""

    def __init__(self, entries=(), *, provenance=None, allow_nonfinite=False):
        super().__init__(entries, Role.UNSPECIFIED, allow_nonfinite=allow_nonfinite)
        if provenance is not None:
            for summary in provenance:
                if {k: tuple(v) for k, v in summary.items()} != self.shapes():
                    raise DataError("provenance shapes do not match vector entries", code="provenance")
        self.provenance = provenance

    @classmethod
    def from_map(cls, m: Mapping[str, np.ndarray]) -> "TaskVector":
        return cls(m.items() if isinstance(m, TensorMap) else m)


def _require_compat(a, b, what):
    report = validate_compat(a, b)
    if not report.compatible:
        raise IncompatibleError(f"{what}: incompatible tensor maps {report.mismatches}", report)


def _check_finite_scalar(x, what):
    if not math.isfinite(x):
        raise NonFiniteError(f"{what} must be finite, got {x!r}")


def _first_nonfinite(name, arr):
    bad = np.flatnonzero(~np.isfinite(arr.ravel()))
    if bad.size:
        idx = int(bad[0])
        raise NonFiniteError(
            f"non-finite result in {name!r} at flat index {idx}", name=name, index=idx
        )


def diff(minuend: TensorMap, subtrahend: TensorMap) -> TaskVector:
    _require_compat(minuend, subtrahend, "diff")
    out = {}
    for name, a in minuend.items():
        with np.errstate(over="ignore", invalid="ignore"):
            r = (a.astype(np.float64) - subtrahend[name].astype(np.float64)).astype(np.float32)
        _first_nonfinite(name, r)
        out[name] = r
    return TaskVector(out, provenance=(minuend.shapes(), subtrahend.shapes()))


def apply(
    base: TensorMap,
    v: TensorMap,
    lam: float,
    *,
    allow_negative: bool = False,
) -> TensorMap:
    """Return ``base + lam * v`` with role ``corrected``.

    ``lam == 0`` returns base's values bit-for-bit. Negative scaling is
    refused unless ``allow_negative`` is set.
    """
    lam = float(lam)
    _check_finite_scalar(lam, "lambda")
    if lam < 0 and not allow_negative:
        raise DataError(f"negative lambda {lam} requires allow_negative", code="negative_lambda")
    _require_compat(base, v, "apply")
    if lam == 0.0:
        return TensorMap(base.items(), Role.CORRECTED)
    out = {}
    for name, b in base.items():
        with np.errstate(over="ignore", invalid="ignore"):
            r = (b.astype(np.float64) + lam * v[name].astype(np.float64)).astype(np.float32)
        _first_nonfinite(name, r)
        out[name] = r
    return TensorMap(out, Role.CORRECTED)


def average(vectors: Sequence[TensorMap]) -> TaskVector:
    """Elementwise mean, accumulated in float64 in list order."""
    if not vectors:
        raise DataError("average of an empty list", code="empty")
    first = vectors[0]
    for i, v in enumerate(vectors[1:], start=1):
        _require_compat(first, v, f"average (member {i})")
    out = {}
    for name in first:
        # seeded from the first member so a single-vector average is bit-exact
        acc = first[name].astype(np.float64)
        for v in vectors[1:]:
            acc += v[name]
        out[name] = (acc / len(vectors)).astype(np.float32)
    return TaskVector(out)


def scale(v: TensorMap, c: float) -> TaskVector:
    c = float(c)
    _check_finite_scalar(c, "scale factor")
    if c == 1.0:
        return TaskVector(v.items())
    out = {}
    for name, a in v.items():
        with np.errstate(over="ignore", invalid="ignore"):
            r = (c * a.astype(np.float64)).astype(np.float32)
        _first_nonfinite(name, r)
        out[name] = r
    return TaskVector(out)


def negate(v: TensorMap) -> TaskVector:
    return TaskVector({name: -a for name, a in v.items()})


def _flat64(m: TensorMap) -> np.ndarray:
    if len(m) == 0:
        return np.zeros(0)
    return np.concatenate([a.astype(np.float64).ravel() for a in m.values()])


@dataclass(frozen=True)
class VectorStats:
    l2_norm: float
    other_l2_norm: float | None = None
    cosine: float | None = None
    cosine_defined: bool | None = None

    def to_json(self) -> dict:
        out: dict = {"l2_norm": self.l2_norm}
        if self.other_l2_norm is not None:
            out["other_l2_norm"] = self.other_l2_norm
            out["cosine"] = self.cosine
            out["cosine_defined"] = self.cosine_defined
        return out


def vector_stats(a: TensorMap, b: TensorMap | None = None) -> VectorStats:
    """L2 norm of ``a`` and, with ``b``, cosine similarity.

    Sums use ``math.fsum`` (correctly rounded, order independent). A
    zero-norm operand leaves the cosine undefined: ``cosine`` is None and
    ``cosine_defined`` is False.
    """
    fa = _flat64(a)
    na = math.sqrt(math.fsum(fa * fa))
    if b is None:
        return VectorStats(na)
    _require_compat(a, b, "vector_stats")
    fb = _flat64(b)
    nb = math.sqrt(math.fsum(fb * fb))
    if na == 0.0 or nb == 0.0:
        return VectorStats(na, nb, None, False)
    cos = math.fsum(fa * fb) / (na * nb)
    return VectorStats(na, nb, max(-1.0, min(1.0, cos)), True)
