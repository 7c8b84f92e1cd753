"""Shared hypothesis strategies and random generators for tensor maps."""

import numpy as np
from hypothesis import strategies as st

from pseudo2real.tensor_store import TensorMap

names = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12
).filter(lambda s: 1 <= len(s.encode("utf-8")) <= 65535)

shapes = st.lists(st.integers(0, 3), min_size=0, max_size=8).map(tuple)

finite_f32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@st.composite
def tensor_maps(draw, max_entries=5):
    keys = draw(st.lists(names, max_size=max_entries, unique=True))
    entries = []
    for k in keys:
        shape = draw(shapes)
        n = int(np.prod(shape)) if shape else 1
        vals = draw(st.lists(finite_f32, min_size=n, max_size=n))
        entries.append((k, np.array(vals, dtype=np.float32).reshape(shape)))
    return TensorMap(entries)


def random_map(rng, n_tensors=None, max_elems=10_000, scale=1.0):
    """A random map with up to 10 tensors of rank 0-4."""
    if n_tensors is None:
        n_tensors = int(rng.integers(1, 11))
    entries = {}
    for i in range(n_tensors):
        rank = int(rng.integers(0, 5))
        shape = []
        budget = int(rng.integers(1, max_elems + 1))
        for _ in range(rank):
            d = int(rng.integers(1, max(2, int(budget ** (1 / rank)) + 1)))
            shape.append(d)
        entries[f"layer{i}.weight"] = (rng.standard_normal(shape) * scale).astype(np.float32)
    return TensorMap(entries)


def like(rng, m, scale=1.0):
    return TensorMap({k: (rng.standard_normal(v.shape) * scale).astype(np.float32) for k, v in m.items()})
