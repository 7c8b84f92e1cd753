"""Independent brute-force oracles. Deliberately share no code with the
implementations they check."""

import itertools

import numpy as np


def enumerate_edit_scripts(ref, hyp):
    """Minimum over every explicit edit script, by recursive enumeration
    of all operation sequences (exponential; lengths <= 5 only)."""
    ref, hyp = tuple(ref), tuple(hyp)
    best = [len(ref) + len(hyp)]

    def go(i, j, cost):
        if cost >= best[0]:
            return
        if i == len(ref) and j == len(hyp):
            best[0] = cost
            return
        if i < len(ref) and j < len(hyp):
            go(i + 1, j + 1, cost + (ref[i] != hyp[j]))
        if i < len(ref):
            go(i + 1, j, cost + 1)
        if j < len(hyp):
            go(i, j + 1, cost + 1)

    go(0, 0, 0)
    return best[0]


def all_token_lists(alphabet, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


def best_bipartition_inertia(x):
    """Minimum 2-means inertia over every split of the rows into two
    non-empty groups (2^(n-1) - 1 candidates)."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    best = np.inf
    best_mask = None
    for bits in range(1, 2 ** (n - 1)):
        mask = np.array([(bits >> i) & 1 for i in range(n)], dtype=bool)
        a, b = x[mask], x[~mask]
        cost = ((a - a.mean(0)) ** 2).sum() + ((b - b.mean(0)) ** 2).sum()
        if cost < best:
            best, best_mask = cost, mask
    return best, best_mask


def finite_diff_grad(f, params, eps=1e-6):
    """Central differences of scalar f with respect to each array in params."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + eps
            up = f()
            p[idx] = old - eps
            down = f()
            p[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads
