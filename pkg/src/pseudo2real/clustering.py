"""Speaker subgroup discovery: k-means over per-utterance embeddings.

Lloyd's algorithm with greedy k-means++ seeding and best-of-``n_init``
restarts. Each restart draws from its own child stream of
``SeedSequence(seed)``, so restarts can run in any order or in parallel
without changing the result.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .manifest import UtteranceRecord


class ClusteringError(DataError):
    code = "clustering"


@dataclass(frozen=True)
class EmbeddingSet:
    ids: tuple[str, ...]
    vectors: np.ndarray  # (n, dim) float64

    def __post_init__(self):
        vecs = np.asarray(self.vectors, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[0] == 0 or vecs.shape[1] == 0:
            raise ClusteringError("embedding set needs at least one item of positive dim", code="empty")
        if len(self.ids) != vecs.shape[0]:
            raise ClusteringError("ids and vectors differ in length", code="dim_mismatch")
        if len(set(self.ids)) != len(self.ids):
            raise ClusteringError("duplicate utterance ids in embedding set", code="duplicate_id")
        if not np.all(np.isfinite(vecs)):
            raise ClusteringError("non-finite embedding values", code="non_finite")
        vecs = vecs.copy()
        vecs.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "vectors", vecs)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_items(cls, items: Mapping[str, Sequence[float]] | Sequence[tuple[str, Sequence[float]]]):
        pairs = list(items.items()) if isinstance(items, Mapping) else list(items)
        if not pairs:
            raise ClusteringError("embedding set is empty", code="empty")
        dims = {len(v) for _, v in pairs}
        if len(dims) != 1:
            raise ClusteringError(f"embeddings have mixed dims {sorted(dims)}", code="dim_mismatch")
        return cls(tuple(k for k, _ in pairs), np.array([v for _, v in pairs], dtype=np.float64))


def read_embeddings(path) -> EmbeddingSet:
    items = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                uid, emb = obj["id"], obj["embedding"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise ClusteringError(f"line {lineno}: expected {{'id', 'embedding'}} object", code="bad_line") from None
            if not isinstance(uid, str) or not uid or not isinstance(emb, list):
                raise ClusteringError(f"line {lineno}: bad id or embedding", code="bad_line")
            items.append((uid, emb))
    return EmbeddingSet.from_items(items)


@dataclass(frozen=True)
class KMeansParams:
    max_iter: int = 300
    tol: float = 1e-4
    n_init: int = 10


@dataclass
class KMeansRun:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    converged: bool
    # inertia after each assignment+update step, starting with the seeding
    inertia_trace: list[float] = field(default_factory=list)


@dataclass
class ClusterAssignment:
    k: int
    seed: int
    centroids: np.ndarray
    ids: tuple[str, ...]
    label_array: np.ndarray
    inertia: float
    runs: list[KMeansRun] = field(default_factory=list, repr=False)
    best_run: int = 0

    @property
    def labels(self) -> dict[str, int]:
        return {uid: int(c) for uid, c in zip(self.ids, self.label_array)}

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "inertia": self.inertia,
            "centroids": self.centroids.tolist(),
            "labels": self.labels,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClusterAssignment":
        try:
            k = int(obj["k"])
            labels = obj["labels"]
            centroids = np.asarray(obj["centroids"], dtype=np.float64)
            ids = tuple(labels)
            arr = np.array([int(labels[i]) for i in ids], dtype=np.int64)
            seed = int(obj.get("seed", 0))
            inertia = float(obj.get("inertia", float("nan")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ClusteringError(f"malformed assignment: {exc}", code="bad_assignment") from None
        if k <= 0 or (arr.size and (arr.min() < 0 or arr.max() >= k)):
            raise ClusteringError("assignment labels out of range", code="bad_assignment")
        return cls(k, seed, centroids, ids, arr, inertia)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # explicit differences rather than the |x|^2 - 2xc + |c|^2 expansion:
    # exact zeros for coincident points and no cancellation error
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _inertia(x, centroids, labels) -> float:
    return float(((x - centroids[labels]) ** 2).sum())


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: each new centre is the best of ``2 + ln k``
    D^2-weighted candidates by resulting potential."""
    n = x.shape[0]
    n_trials = 2 + int(math.log(k))
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    closest = _sq_dists(x, centers[:1])[:, 0]
    for c in range(1, k):
        pot = closest.sum()
        if pot <= 0.0:
            # all remaining points coincide with a centre already chosen
            cand = rng.integers(n, size=n_trials)
        else:
            cum = np.cumsum(closest)
            cand = np.searchsorted(cum, rng.random(n_trials) * cum[-1], side="right")
            cand = np.minimum(cand, n - 1)
        d_cand = _sq_dists(x, x[cand])  # (n, trials)
        new_closest = np.minimum(closest[:, None], d_cand)
        best = int(np.argmin(new_closest.sum(axis=0)))
        centers[c] = x[cand[best]]
        closest = new_closest[:, best]
    return centers


def _repair_empty(x, centroids, labels, k):
    """Move the point farthest from its centroid into each empty cluster."""
    counts = np.bincount(labels, minlength=k)
    for empty in np.flatnonzero(counts == 0):
        d = ((x - centroids[labels]) ** 2).sum(axis=1)
        donors = counts[labels] >= 2
        d = np.where(donors, d, -1.0)
        p = int(np.argmax(d))
        old = labels[p]
        labels[p] = empty
        counts[old] -= 1
        counts[empty] += 1
        centroids[empty] = x[p]
        centroids[old] = x[labels == old].mean(axis=0)
    return centroids, labels


def lloyd(x: np.ndarray, init: np.ndarray, max_iter: int, tol: float) -> KMeansRun:
    """Lloyd iterations from ``init``.

    Stops once the Frobenius norm of the centroid shift is at most
    ``tol * sqrt(mean per-dimension variance of x)``, or after ``max_iter``
    steps. Final labels are recomputed against the returned centroids.
    """
    k = init.shape[0]
    scaled_tol = tol * math.sqrt(float(np.mean(np.var(x, axis=0))))
    centroids = init.copy()
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    trace = [_inertia(x, centroids, labels)]
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        labels = np.argmin(_sq_dists(x, centroids), axis=1)
        new = np.empty_like(centroids)
        for c in range(k):
            members = labels == c
            new[c] = x[members].mean(axis=0) if members.any() else centroids[c]
        new, labels = _repair_empty(x, new, labels, k)
        shift = float(np.sqrt(((new - centroids) ** 2).sum()))
        centroids = new
        trace.append(_inertia(x, centroids, labels))
        if shift <= scaled_tol:
            converged = True
            break
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    return KMeansRun(centroids, labels, _inertia(x, centroids, labels), n_iter, converged, trace)


def kmeans(
    e: EmbeddingSet,
    k: int,
    seed: int,
    params: KMeansParams = KMeansParams(),
    threads: int = 1,
) -> ClusterAssignment:
    if not isinstance(k, (int, np.integer)) or k <= 0:
        raise ClusteringError(f"k must be a positive integer, got {k!r}", code="bad_k")
    if k > len(e):
        raise ClusteringError(f"k={k} exceeds the number of items ({len(e)})", code="bad_k")
    if params.n_init < 1 or params.max_iter < 0 or not params.tol >= 0:
        raise ClusteringError(f"invalid k-means parameters {params}", code="bad_params")
    x = e.vectors
    streams = np.random.SeedSequence(int(seed) % 2**64).spawn(params.n_init)

    def one(ss):
        rng = np.random.Generator(np.random.PCG64(ss))
        return lloyd(x, kmeans_plusplus(x, k, rng), params.max_iter, params.tol)

    if threads > 1 and params.n_init > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(one, streams))
    else:
        runs = [one(ss) for ss in streams]
    # strict < keeps the lowest restart index on ties
    best = 0
    for i, r in enumerate(runs):
        if r.inertia < runs[best].inertia:
            best = i
    b = runs[best]
    return ClusterAssignment(k, int(seed), b.centroids, e.ids, b.labels, b.inertia, runs, best)


def partition_manifests(
    a: ClusterAssignment, records: Sequence[UtteranceRecord]
) -> list[list[UtteranceRecord]]:
    """Split records into ``a.k`` lists by cluster label, keeping input
    order inside each list. Clusters with no records give empty lists."""
    labels = a.labels
    out: list[list[UtteranceRecord]] = [[] for _ in range(a.k)]
    for r in records:
        if r.id not in labels:
            raise ClusteringError(f"record id {r.id!r} is not in the assignment", code="unknown_id", id=r.id)
        out[labels[r.id]].append(r)
    return out
