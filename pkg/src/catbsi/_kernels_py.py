"""Pure-numpy Philox4x32-10 kernels.

Fallback used when the compiled ``_ckernels`` extension is unavailable.  Both
backends share the counter layout documented in :mod:`catbsi.rng`.
"""

import numpy as np

_MASK = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_ROUNDS = 10


def _philox(c0, c1, c2, c3, k0, k1):
    """Run the Philox rounds on uint64 arrays holding 32-bit words."""
    for _ in range(_ROUNDS):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> np.uint64(32)) ^ c1 ^ np.uint64(k0),
            p1 & _MASK,
            (p0 >> np.uint64(32)) ^ c3 ^ np.uint64(k1),
            p0 & _MASK,
        )
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def philox4x32(ctr, key):
    """Philox4x32-10 block function.

    ``ctr`` is a uint32 array with trailing dimension 4, ``key`` a pair of
    32-bit integers.  Returns a uint32 array of the same shape.
    """
    ctr = np.asarray(ctr, dtype=np.uint64)
    words = _philox(ctr[..., 0], ctr[..., 1], ctr[..., 2], ctr[..., 3],
                    int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF)
    return np.stack(words, axis=-1).astype(np.uint32)


def counter_words(seed, stream, step, lanes, comps, nblocks):
    """Philox output words ``[len(lanes), len(comps), nblocks, 4]`` as uint32."""
    lanes = np.asarray(lanes, dtype=np.int64).astype(np.uint64) & _MASK
    comps = np.asarray(comps, dtype=np.int64).astype(np.uint64) & _MASK
    L, n = lanes.shape[0], comps.shape[0]
    c0 = np.broadcast_to(lanes[:, None, None], (L, n, nblocks))
    c1 = np.broadcast_to(comps[None, :, None], (L, n, nblocks))
    c2 = np.full((L, n, nblocks), int(step) & 0xFFFFFFFF, dtype=np.uint64)
    c3 = (np.uint64((int(stream) & 0xFFF) << 20)
          | np.arange(nblocks, dtype=np.uint64))[None, None, :]
    c3 = np.broadcast_to(c3, (L, n, nblocks))
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    words = _philox(c0, c1, c2, c3, seed & 0xFFFFFFFF, seed >> 32)
    return np.stack(words, axis=-1).astype(np.uint32)
