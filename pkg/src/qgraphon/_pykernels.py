"""Pure numpy implementations of the combinatorial norm kernels.

These mirror ``_ckernels.pyx`` one for one. Values are unnormalized sums
over block weights; callers divide by ``n**2``.
"""

import numpy as np

_CHUNK_BITS = 14


def _bit_rows(start, stop, n):
    idx = np.arange(start, stop, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.float64)


def cut_norm_enum(w):
    """max over subsets S of max(sum of positive, sum of negative) column sums."""
    w = np.ascontiguousarray(w, dtype=np.float64)
    n = w.shape[0]
    total = 1 << n
    step = 1 << min(n, _CHUNK_BITS)
    best = 0.0
    for start in range(0, total, step):
        S = _bit_rows(start, min(start + step, total), n)
        r = S @ w
        pos = np.clip(r, 0.0, None).sum(axis=1)
        neg = np.clip(-r, 0.0, None).sum(axis=1)
        best = max(best, float(pos.max()), float(neg.max()))
    return best


def op_norm_enum(w):
    """max over sign vectors phi of sum_u |sum_v w[u, v] phi[v]|."""
    w = np.ascontiguousarray(w, dtype=np.float64)
    n = w.shape[0]
    # phi and -phi give the same value: pin the last sign to +1
    total = 1 << (n - 1)
    step = 1 << min(n - 1, _CHUNK_BITS)
    best = 0.0
    for start in range(0, total, step):
        bits = _bit_rows(start, min(start + step, total), n)
        phi = 1.0 - 2.0 * bits
        phi[:, n - 1] = 1.0
        s = phi @ w.T
        best = max(best, float(np.abs(s).sum(axis=1).max()))
    return best


def _alternate(w, S, sign, max_iter):
    val = -np.inf
    for _ in range(max_iter):
        c = sign * (S @ w)
        T = (c > 0).astype(np.float64)
        v1 = c[c > 0].sum()
        r = sign * (w @ T)
        S = (r > 0).astype(np.float64)
        v2 = r[r > 0].sum()
        new = max(v1, v2)
        if new <= val:
            break
        val = new
    return max(val, 0.0)


def cut_norm_alternating(w, starts, max_iter=100):
    """Best value of alternating maximization from each start indicator row."""
    w = np.ascontiguousarray(w, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.float64)
    best = 0.0
    for S in starts:
        for sign in (1.0, -1.0):
            best = max(best, _alternate(w, S, sign, max_iter))
    return float(best)
