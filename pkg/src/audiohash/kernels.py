"""Packed-code scan kernels.

Every kernel has a numba implementation and a numpy implementation with the
same contract. The public names dispatch on :data:`audiohash._accel.HAS_NUMBA`;
the ``*_numba`` / ``*_numpy`` variants are importable for tests and benchmarks.

Codes are ``(N, W)`` arrays of ``uint64`` words. Distances are ``int64``.
Rankings order by ascending distance, then ascending row index.
"""

import numpy as np

from ._accel import HAS_NUMBA, njit

# --------------------------------------------------------------------------
# numba kernels

@njit(cache=True, inline="always")
def _popcount64(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit(cache=True)
def hamming_scan_numba(codes, query):
    n, w = codes.shape
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        acc = np.uint64(0)
        for j in range(w):
            acc += _popcount64(codes[i, j] ^ query[j])
        out[i] = np.int64(acc)
    return out


@njit(cache=True)
def _counting_order_numba(dist, limit, max_d):
    # Stable bucket order over distances <= max_d, truncated to `limit` rows.
    hist = np.zeros(max_d + 2, dtype=np.int64)
    for i in range(dist.shape[0]):
        d = dist[i]
        if d <= max_d:
            hist[d] += 1
    total = 0
    cutoff = max_d
    for d in range(max_d + 1):
        if total + hist[d] >= limit:
            cutoff = d
            break
        total += hist[d]
    take = np.zeros(max_d + 2, dtype=np.int64)
    remaining = limit
    for d in range(cutoff + 1):
        t = hist[d] if hist[d] < remaining else remaining
        take[d] = t
        remaining -= t
    n_out = limit - remaining
    start = np.zeros(max_d + 2, dtype=np.int64)
    for d in range(1, cutoff + 1):
        start[d] = start[d - 1] + take[d - 1]
    out = np.empty(n_out, dtype=np.int64)
    for i in range(dist.shape[0]):
        d = dist[i]
        if d <= cutoff and take[d] > 0:
            out[start[d]] = i
            start[d] += 1
            take[d] -= 1
    return out


def topk_order_numba(dist, k, n_bits):
    k = min(int(k), dist.shape[0])
    if k == 0:
        return np.empty(0, dtype=np.int64)
    return _counting_order_numba(np.ascontiguousarray(dist, dtype=np.int64), k, int(n_bits))


def radius_order_numba(dist, r):
    n = dist.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    return _counting_order_numba(np.ascontiguousarray(dist, dtype=np.int64), n, int(r))


# --------------------------------------------------------------------------
# numpy kernels

def hamming_scan_numpy(codes, query):
    if codes.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    x = np.bitwise_xor(codes, query[None, :])
    if hasattr(np, "bitwise_count"):
        return np.bitwise_count(x).sum(axis=1, dtype=np.int64)
    return np.unpackbits(x.view(np.uint8), axis=1).sum(axis=1, dtype=np.int64)


def topk_order_numpy(dist, k, n_bits):
    n = dist.shape[0]
    k = min(int(k), n)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    key = dist.astype(np.int64) * n + np.arange(n, dtype=np.int64)
    if k < n:
        part = np.argpartition(key, k - 1)[:k]
    else:
        part = np.arange(n)
    return part[np.argsort(key[part])].astype(np.int64)


def radius_order_numpy(dist, r):
    idx = np.flatnonzero(dist <= r)
    return idx[np.argsort(dist[idx], kind="stable")].astype(np.int64)


if HAS_NUMBA:
    hamming_scan = hamming_scan_numba
    topk_order = topk_order_numba
    radius_order = radius_order_numba
else:
    hamming_scan = hamming_scan_numpy
    topk_order = topk_order_numpy
    radius_order = radius_order_numpy
