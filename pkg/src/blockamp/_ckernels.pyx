# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, M_PI
from libc.stdint cimport uint64_t, int64_t, int32_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_M53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t ctr) nogil:
    return <double>(_mix(key + (ctr + 1) * GOLDEN) >> 11) * TWO_M53



cdef inline bint _ok(int64_t[::1] cum, Py_ssize_t s, Py_ssize_t e,
                     int64_t min_count, double min_drop_frac):
    cdef int64_t cnt = e - s
    return cnt > min_count and <double>(cum[e] - cum[s]) > min_drop_frac * <double>cnt


def sqrt_fanout(Py_ssize_t n_txs, Py_ssize_t n_peers, Py_ssize_t k, key, offset=0):
    if k > n_peers or k < 0:
        raise ValueError("k must lie in [0, n_peers]")
    out_arr = np.empty((n_txs, k), dtype=np.int32)
    if n_txs == 0 or k == 0:
        return out_arr
    cdef int32_t[:, ::1] out = out_arr
    cdef uint64_t ukey = <uint64_t>(key & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t base = <uint64_t>offset
    cdef int32_t *perm = <int32_t *>malloc(n_peers * sizeof(int32_t))
    cdef Py_ssize_t t, j, r, i
    cdef int32_t tmp
    if perm == NULL:
        raise MemoryError()
    try:
        with nogil:
            for t in range(n_txs):
                for i in range(n_peers):
                    perm[i] = <int32_t>i
                for j in range(k):
                    r = j + <Py_ssize_t>(_uniform(ukey, base + t * k + j) * <double>(n_peers - j))
                    tmp = perm[j]
                    perm[j] = perm[r]
                    perm[r] = tmp
                    out[t, j] = perm[j]
    finally:
        free(perm)
    return out_arr


def monitor_hits(Py_ssize_t n_peers, Py_ssize_t k, int64_t m, key, offset=0, chunk=0):
    if k > n_peers or k < 0:
        raise ValueError("k must lie in [0, n_peers]")
    cdef uint64_t ukey = <uint64_t>(key & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t base = <uint64_t>offset
    cdef int64_t t, hits = 0
    cdef Py_ssize_t j, r, pos
    with nogil:
        for t in range(m):
            pos = 0
            for j in range(k):
                r = j + <Py_ssize_t>(_uniform(ukey, base + t * k + j) * <double>(n_peers - j))
                if pos == j:
                    pos = r
                elif pos == r:
                    pos = j
            if pos < k:
                hits += 1
    return int(hits)


def kde_grid(samples, double bandwidth, grid):
    cdef double[::1] xs = np.ascontiguousarray(np.asarray(samples, dtype=np.float64))
    cdef double[::1] gs = np.ascontiguousarray(np.asarray(grid, dtype=np.float64))
    out_arr = np.zeros(gs.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t n = xs.shape[0], g, i
    cdef double norm = 1.0 / (n * bandwidth * sqrt(2.0 * M_PI))
    cdef double z, acc, x
    with nogil:
        for g in range(gs.shape[0]):
            x = gs[g]
            acc = 0.0
            # exp underflows to 0 past 40 sigma anyway
            for i in range(n):
                z = (x - xs[i]) / bandwidth
                if z > 40.0 or z < -40.0:
                    continue
                acc += exp(-0.5 * z * z)
            out[g] = acc * norm
    return out_arr


def burst_windows(times, dropped, int64_t window_ms, int64_t min_count, double min_drop_frac):
    cdef int64_t[::1] ts = np.ascontiguousarray(np.asarray(times, dtype=np.int64))
    cdef cnp.uint8_t[::1] dr = np.ascontiguousarray(np.asarray(dropped, dtype=np.uint8))
    cdef Py_ssize_t n = ts.shape[0], i, e = 0, cur_s = -1, cur_e = -1, ne
    cum_arr = np.zeros(n + 1, dtype=np.int64)
    cdef int64_t[::1] cum = cum_arr
    for i in range(n):
        cum[i + 1] = cum[i] + (1 if dr[i] else 0)
    out = []
    cdef int64_t limit
    for i in range(n):
        if e < i:
            e = i
        limit = ts[i] + window_ms
        while e < n and ts[e] < limit:
            e += 1
        if not _ok(cum, i, e, min_count, min_drop_frac):
            continue
        if cur_s >= 0 and i < cur_e:
            ne = e if e > cur_e else cur_e
            if _ok(cum, cur_s, ne, min_count, min_drop_frac):
                cur_e = ne
            continue
        if cur_s >= 0:
            out.append((cur_s, cur_e))
        cur_s = i
        cur_e = e
    if cur_s >= 0:
        out.append((cur_s, cur_e))
    return out

