# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Philox4x32-10 kernels (same counter layout as ``_kernels_py``)."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint32_t, uint64_t

cnp.import_array()

cdef uint32_t M0 = 0xD2511F53
cdef uint32_t M1 = 0xCD9E8D57
cdef uint32_t W0 = 0x9E3779B9
cdef uint32_t W1 = 0xBB67AE85


cdef inline void _philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t x0, x1, x2, x3
    cdef int r
    for r in range(10):
        p0 = <uint64_t>M0 * c[0]
        p1 = <uint64_t>M1 * c[2]
        x0 = <uint32_t>(p1 >> 32) ^ c[1] ^ k0
        x1 = <uint32_t>p1
        x2 = <uint32_t>(p0 >> 32) ^ c[3] ^ k1
        x3 = <uint32_t>p0
        c[0] = x0
        c[1] = x1
        c[2] = x2
        c[3] = x3
        k0 = k0 + W0
        k1 = k1 + W1


def philox4x32(ctr, key):
    cdef cnp.ndarray[uint32_t, ndim=2] flat = np.ascontiguousarray(
        np.asarray(ctr, dtype=np.uint32).reshape(-1, 4)).copy()
    cdef uint32_t k0 = <uint32_t>(int(key[0]) & 0xFFFFFFFF)
    cdef uint32_t k1 = <uint32_t>(int(key[1]) & 0xFFFFFFFF)
    cdef Py_ssize_t i
    for i in range(flat.shape[0]):
        _philox(&flat[i, 0], k0, k1)
    return flat.reshape(np.shape(ctr))


def counter_words(seed, stream, step, lanes, comps, Py_ssize_t nblocks):
    """Philox output words ``[len(lanes), len(comps), nblocks, 4]`` as uint32."""
    cdef int64_t[::1] lv = np.ascontiguousarray(lanes, dtype=np.int64)
    cdef int64_t[::1] cv = np.ascontiguousarray(comps, dtype=np.int64)
    cdef Py_ssize_t L = lv.shape[0], n = cv.shape[0]
    out = np.empty((L, n, nblocks, 4), dtype=np.uint32)
    cdef uint32_t[:, :, :, ::1] o = out
    cdef uint64_t s = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef uint32_t k0 = <uint32_t>s, k1 = <uint32_t>(s >> 32)
    cdef uint32_t st = <uint32_t>(int(step) & 0xFFFFFFFF)
    cdef uint32_t tag = <uint32_t>((int(stream) & 0xFFF) << 20)
    cdef Py_ssize_t a, b, blk
    with nogil:
        for a in range(L):
            for b in range(n):
                for blk in range(nblocks):
                    o[a, b, blk, 0] = <uint32_t>lv[a]
                    o[a, b, blk, 1] = <uint32_t>cv[b]
                    o[a, b, blk, 2] = st
                    o[a, b, blk, 3] = tag | <uint32_t>blk
                    _philox(&o[a, b, blk, 0], k0, k1)
    return out
