"""Backend selection for the random-number kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``CATBSI_PURE_PYTHON=1`` to force the fallback.

Backends only produce raw Philox words.  The conversion to floats below is
shared, so both backends give bit-identical normals and uniforms (the C and
numpy transcendental functions can differ in the last ulp).
"""

import os

import numpy as np

from catbsi import _kernels_py

if os.environ.get("CATBSI_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from catbsi import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

philox4x32 = _impl.philox4x32
counter_words = _impl.counter_words

_TWO_PI = 2.0 * np.pi
_INV_2_32 = 1.0 / 4294967296.0
_INV_2_53 = 1.0 / 9007199254740992.0


def words_to_normal(words, c):
    """Box-Muller on word pairs: ``[L, n, nblocks, 4]`` uint32 -> ``[L, n, c]`` normals."""
    w = words.astype(np.float64)
    u1 = (w[..., 0::2] + 1.0) * _INV_2_32
    u2 = w[..., 1::2] * _INV_2_32
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(words.shape, dtype=np.float64)
    out[..., 0::2] = r * np.cos(_TWO_PI * u2)
    out[..., 1::2] = r * np.sin(_TWO_PI * u2)
    L, n = words.shape[:2]
    return np.ascontiguousarray(out.reshape(L, n, -1)[..., :c])


def words_to_uniform(words, m):
    """53-bit uniforms on [0, 1) from word pairs: -> ``[L, n, m]``."""
    hi = (words[..., 0::2] >> np.uint32(5)).astype(np.float64)
    lo = (words[..., 1::2] >> np.uint32(6)).astype(np.float64)
    L, n = words.shape[:2]
    out = (hi * 67108864.0 + lo) * _INV_2_53
    return np.ascontiguousarray(out.reshape(L, n, -1)[..., :m])


def normal_fill(seed, stream, step, lanes, comps, c, backend=None):
    """Standard normals ``[len(lanes), len(comps), c]`` for the given counters."""
    impl = backend or _impl
    return words_to_normal(impl.counter_words(seed, stream, step, lanes, comps,
                                              (int(c) + 3) // 4), c)


def uniform_fill(seed, stream, step, lanes, comps, m, backend=None):
    """Uniforms ``[len(lanes), len(comps), m]`` on [0, 1) for the given counters."""
    impl = backend or _impl
    return words_to_uniform(impl.counter_words(seed, stream, step, lanes, comps,
                                               (int(m) + 1) // 2), m)


__all__ = ["BACKEND", "philox4x32", "counter_words", "normal_fill", "uniform_fill"]
