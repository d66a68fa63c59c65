"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, step, lane, component)``,
so results do not depend on batch size, evaluation order or thread count,
and permuting the component ids permutes the noise with them.

Philox4x32-10 counter layout::

    word 0  lane (trajectory / batch slot)
    word 1  component id
    word 2  step
    word 3  (stream << 20) | block
    key     low and high 32 bits of the seed
"""

from enum import IntEnum

import numpy as np

from catbsi import kernels


class Stream(IntEnum):
    """Base stream tags.  A channel index (0..15) is added on top."""

    PRIOR = 1 << 4
    STEP = 2 << 4
    CATEGORICAL = 3 << 4
    ENCODE = 4 << 4
    TIME = 5 << 4
    DATA = 6 << 4
    NODE_COUNT = 7 << 4
    MEASURE = 8 << 4


def _ids(ids, default_len):
    if ids is None:
        return np.arange(default_len, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and ids.min() < 0:
        raise ValueError("stream ids must be nonnegative")
    return ids


class CounterRNG:
    """Stateless random source keyed by a 64-bit seed."""

    def __init__(self, seed=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def __repr__(self):
        return f"CounterRNG(seed={self.seed})"

    def normal(self, stream, step, c, n=None, *, components=None, lanes=None):
        """Standard normals shaped ``[L, n, c]`` (``[n, c]`` when ``lanes`` is None).

        ``lanes`` may be an int (meaning ``range(lanes)``) or an id array.
        """
        comps = _ids(components, n)
        lane_ids, squeeze = self._lanes(lanes)
        out = kernels.normal_fill(self.seed, int(stream), int(step), lane_ids, comps, int(c))
        return out[0] if squeeze else out

    def uniform(self, stream, step, m, n=None, *, components=None, lanes=None):
        """Uniforms on [0, 1) shaped like :meth:`normal`."""
        comps = _ids(components, n)
        lane_ids, squeeze = self._lanes(lanes)
        out = kernels.uniform_fill(self.seed, int(stream), int(step), lane_ids, comps, int(m))
        return out[0] if squeeze else out

    @staticmethod
    def _lanes(lanes):
        if lanes is None:
            return np.zeros(1, dtype=np.int64), True
        if np.isscalar(lanes):
            return np.arange(int(lanes), dtype=np.int64), False
        return _ids(lanes, 0), False
