"""Named float32 tensor maps and the TVA1 binary archive format.

TVA1 layout (little-endian, no padding, no footer)::

    b"TVA1"  u32 count
    repeated count times:
        u16 name_len  name (UTF-8)  u8 rank  rank * u64 dims  prod(dims) * f32

A rank-0 entry is a scalar holding exactly one value.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import DataError

MAGIC = b"TVA1"
MAX_RANK = 8
MAX_NAME_BYTES = 65535
_U64_MAX = 2**64 - 1


class Role(str, enum.Enum):
    PRETRAINED = "pretrained"
    REAL_FINETUNED = "real_finetuned"
    PSEUDO_FINETUNED = "pseudo_finetuned"
    CORRECTED = "corrected"
    UNSPECIFIED = "unspecified"


class ArchiveError(DataError):
    code = "archive"


class TensorMap(Mapping[str, np.ndarray]):
    """Ordered, immutable mapping of names to float32 arrays.

    Arrays are copied on construction and frozen (``writeable=False``).
    Equality compares names, order, shapes and raw float bits; the role tag
    is metadata and does not take part in equality or arithmetic.
    """

    def __init__(
        self,
        entries: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]] = (),
        role: Role | str = Role.UNSPECIFIED,
        *,
        allow_nonfinite: bool = False,
    ):
        items = entries.items() if isinstance(entries, Mapping) else entries
        self._entries: dict[str, np.ndarray] = {}
        for name, value in items:
            if not isinstance(name, str):
                raise DataError(f"tensor name must be str, got {type(name).__name__}", code="bad_name")
            if name in self._entries:
                raise DataError(f"duplicate tensor name {name!r}", code="duplicate_name", name=name)
            nbytes = len(name.encode("utf-8"))
            if not 1 <= nbytes <= MAX_NAME_BYTES:
                raise DataError(
                    f"tensor name must be 1..{MAX_NAME_BYTES} UTF-8 bytes, got {nbytes}",
                    code="bad_name",
                )
            arr = np.array(value, dtype=np.float32, copy=True)
            if arr.ndim > MAX_RANK:
                raise DataError(f"tensor {name!r} has rank {arr.ndim} > {MAX_RANK}", code="rank", name=name)
            if not allow_nonfinite and not np.all(np.isfinite(arr)):
                idx = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
                raise DataError(
                    f"non-finite value in {name!r} at flat index {idx}",
                    code="non_finite",
                    name=name,
                    index=idx,
                )
            arr.setflags(write=False)
            self._entries[name] = arr
        self.role = Role(role)
        self.allow_nonfinite = allow_nonfinite

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorMap):
            return NotImplemented
        if list(self._entries) != list(other._entries):
            return False
        for name, a in self._entries.items():
            b = other._entries[name]
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return True

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}: {list(v.shape)}" for k, v in self._entries.items())
        return f"{type(self).__name__}({{{shapes}}}, role={self.role.value})"

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._entries.items()}

    def with_role(self, role: Role | str) -> "TensorMap":
        return TensorMap(self._entries, role, allow_nonfinite=self.allow_nonfinite)

    @property
    def num_elements(self) -> int:
        return sum(v.size for v in self._entries.values())


@dataclass(frozen=True)
class CompatReport:
    mismatches: list[tuple[str, str]] = field(default_factory=list)

    @property
    def compatible(self) -> bool:
        return not self.mismatches

    def to_json(self) -> dict:
        return {
            "compatible": self.compatible,
            "mismatches": [{"name": n, "reason": r} for n, r in self.mismatches],
        }


def validate_compat(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> CompatReport:
    """Check that two maps have identical names and per-name shapes.

    Findings are listed in a's order, then names only present in b.
    """
    mismatches = []
    for name in a:
        if name not in b:
            mismatches.append((name, "missing_in_b"))
        elif np.shape(a[name]) != np.shape(b[name]):
            mismatches.append((name, "shape_mismatch"))
    for name in b:
        if name not in a:
            mismatches.append((name, "missing_in_a"))
    return CompatReport(mismatches)


def save_archive(m: TensorMap) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(m))]
    for name, arr in m.items():
        raw = name.encode("utf-8")
        if len(raw) > MAX_NAME_BYTES:
            raise ArchiveError(f"name of {len(raw)} bytes exceeds {MAX_NAME_BYTES}", code="name_too_long")
        if arr.ndim > MAX_RANK:
            raise ArchiveError(f"tensor {name!r} rank {arr.ndim} > {MAX_RANK}", code="rank")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        if arr.ndim:
            parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        if n > len(self.data) - self.pos:
            raise ArchiveError(
                f"truncated archive reading {what} at offset {self.pos}",
                code="truncated",
                offset=self.pos,
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_archive(data: bytes, *, allow_nonfinite: bool = False) -> TensorMap:
    r = _Reader(bytes(data))
    if len(data) < 4 or bytes(r.take(4, "magic")) != MAGIC:
        if len(data) < 4 and MAGIC.startswith(bytes(data)):
            raise ArchiveError("truncated archive reading magic", code="truncated", offset=0)
        raise ArchiveError("bad magic, expected b'TVA1'", code="bad_magic")
    (count,) = r.unpack("<I", "tensor count")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        raw = bytes(r.take(name_len, "name"))
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ArchiveError(f"tensor name is not valid UTF-8: {exc}", code="bad_name") from None
        if not name:
            raise ArchiveError("empty tensor name", code="bad_name")
        if name in entries:
            raise ArchiveError(f"duplicate tensor name {name!r}", code="duplicate_name", name=name)
        (rank,) = r.unpack("<B", "rank")
        if rank > MAX_RANK:
            raise ArchiveError(f"tensor {name!r} rank {rank} > {MAX_RANK}", code="rank", name=name)
        dims = r.unpack(f"<{rank}Q", "dims") if rank else ()
        n = 1
        for d in dims:
            n *= d
        if n * 4 > _U64_MAX:
            raise ArchiveError(
                f"tensor {name!r} declares {n} elements, overflowing a 64-bit byte length",
                code="length_overflow",
                name=name,
            )
        payload = r.take(n * 4, f"payload of {name!r}")
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
        if not allow_nonfinite and not np.all(np.isfinite(arr)):
            idx = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
            raise ArchiveError(
                f"non-finite value in {name!r} at flat index {idx}",
                code="non_finite",
                name=name,
                index=idx,
            )
        entries[name] = arr
    if r.pos != len(r.data):
        raise ArchiveError(
            f"{len(r.data) - r.pos} trailing bytes after last tensor",
            code="trailing_garbage",
        )
    return TensorMap(entries, allow_nonfinite=allow_nonfinite)


def write_archive(path, m: TensorMap) -> None:
    with open(path, "wb") as f:
        f.write(save_archive(m))


def read_archive(path, *, allow_nonfinite: bool = False) -> TensorMap:
    with open(path, "rb") as f:
        return load_archive(f.read(), allow_nonfinite=allow_nonfinite)
