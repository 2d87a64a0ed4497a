"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation. The fan-out and
burst-window kernels are bit-identical to the compiled versions; the KDE
sum agrees to rounding.
"""
import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO_M53 = 1.0 / 9007199254740992.0


def mix64(z):
    """splitmix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z):
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def uniforms(key, start, count):
    """Counter-mode uniforms in [0, 1) for counters start..start+count-1."""
    ctr = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key & MASK64) + ctr * np.uint64(GOLDEN)
        z = _mix64_array(z)
    return (z >> np.uint64(11)).astype(np.float64) * _TWO_M53


def sqrt_fanout(n_txs, n_peers, k, key, offset=0):
    """Choose ``k`` distinct peer indices per transaction (partial Fisher-Yates).

    Returns an ``(n_txs, k)`` int32 array. Row ``t`` consumes counters
    ``offset + t*k .. offset + t*k + k - 1``.
    """
    if k > n_peers or k < 0:
        raise ValueError("k must lie in [0, n_peers]")
    out = np.empty((n_txs, k), dtype=np.int32)
    if n_txs == 0 or k == 0:
        return out
    u = uniforms(key, offset, n_txs * k).reshape(n_txs, k)
    perm = np.tile(np.arange(n_peers, dtype=np.int32), (n_txs, 1))
    rows = np.arange(n_txs)
    for j in range(k):
        r = j + np.floor(u[:, j] * (n_peers - j)).astype(np.int64)
        a = perm[rows, j].copy()
        perm[rows, j] = perm[rows, r]
        perm[rows, r] = a
        out[:, j] = perm[:, j]
    return out


def monitor_hits(n_peers, k, m, key, offset=0, chunk=1 << 18):
    """Count transactions (of ``m``) whose fan-out includes peer index 0."""
    if k > n_peers or k < 0:
        raise ValueError("k must lie in [0, n_peers]")
    hits = 0
    done = 0
    while done < m:
        n = min(chunk, m - done)
        u = uniforms(key, offset + done * k, n * k).reshape(n, k)
        pos = np.zeros(n, dtype=np.int64)
        for j in range(k):
            r = j + np.floor(u[:, j] * (n_peers - j)).astype(np.int64)
            at_j = pos == j
            at_r = pos == r
            pos = np.where(at_j, r, np.where(at_r, j, pos))
        hits += int(np.count_nonzero(pos < k))
        done += n
    return hits


def kde_grid(samples, bandwidth, grid):
    """Gaussian kernel density of ``samples`` evaluated on ``grid``."""
    samples = np.asarray(samples, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    norm = 1.0 / (samples.size * bandwidth * math.sqrt(2.0 * math.pi))
    out = np.zeros(grid.size, dtype=np.float64)
    step = max(1, 4_000_000 // max(samples.size, 1))
    for lo in range(0, grid.size, step):
        z = (grid[lo:lo + step, None] - samples[None, :]) / bandwidth
        out[lo:lo + step] = np.exp(-0.5 * z * z).sum(axis=1)
    return out * norm


def burst_windows(times, dropped, window_ms, min_count, min_drop_frac):
    """Merged sliding windows with more than ``min_count`` txs and dropped
    share above ``min_drop_frac``.

    ``times`` must be sorted ascending. A window anchored at index ``i``
    holds every ``j >= i`` with ``times[j] < times[i] + window_ms``.
    Returns a list of ``(start, stop)`` index pairs, stop exclusive.
    """
    n = len(times)
    cum = [0] * (n + 1)
    for i in range(n):
        cum[i + 1] = cum[i] + (1 if dropped[i] else 0)

    def ok(s, e):
        cnt = e - s
        return cnt > min_count and (cum[e] - cum[s]) > min_drop_frac * cnt

    out = []
    cur_s = cur_e = -1
    e = 0
    for i in range(n):
        if e < i:
            e = i
        limit = times[i] + window_ms
        while e < n and times[e] < limit:
            e += 1
        if not ok(i, e):
            continue
        if cur_s >= 0 and i < cur_e:
            if ok(cur_s, max(cur_e, e)):
                cur_e = max(cur_e, e)
            continue
        if cur_s >= 0:
            out.append((cur_s, cur_e))
        cur_s, cur_e = i, e
    if cur_s >= 0:
        out.append((cur_s, cur_e))
    return out
