import numpy as np
import pytest

from catbsi import _kernels_py, kernels
from catbsi.rng import CounterRNG, Stream

# Known-answer vectors for Philox4x32-10 from the Random123 distribution.
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]

BACKENDS = [_kernels_py]
try:
    from catbsi import _ckernels
    BACKENDS.append(_ckernels)
except ImportError:  # pragma: no cover - extension not built
    pass


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers(mod, ctr, key, expected):
    out = mod.philox4x32(np.array([ctr], dtype=np.uint32), key)
    assert tuple(int(v) for v in np.asarray(out).reshape(-1)) == expected


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
@pytest.mark.parametrize("c", [1, 2, 3, 4, 5, 9])
def test_backends_bit_identical(c):
    lanes = np.array([0, 3, 17, 2**31 + 5])
    comps = np.array([0, 1, 65541, 7])
    a = BACKENDS[0].counter_words(99, Stream.STEP + 1, 12, lanes, comps, c)
    b = BACKENDS[1].counter_words(99, Stream.STEP + 1, 12, lanes, comps, c)
    assert a.dtype == b.dtype == np.uint32 and a.shape == (4, 4, c, 4)
    np.testing.assert_array_equal(a, b)
    for fill in (kernels.normal_fill, kernels.uniform_fill):
        np.testing.assert_array_equal(fill(99, 3, 12, lanes, comps, c, backend=BACKENDS[0]),
                                      fill(99, 3, 12, lanes, comps, c, backend=BACKENDS[1]))


def test_counter_words_match_single_block_philox():
    for mod in BACKENDS:
        w = mod.counter_words(2**40 + 9, 5, 77, [3], [65541], 2)
        for blk in range(2):
            ctr = np.array([[3, 65541, 77, (5 << 20) | blk]], dtype=np.uint32)
            key = ((2**40 + 9) & 0xFFFFFFFF, (2**40 + 9) >> 32)
            np.testing.assert_array_equal(w[0, 0, blk], mod.philox4x32(ctr, key)[0])


def test_normal_moments():
    z = CounterRNG(5).normal(Stream.STEP, 0, 4, 50_000, lanes=2)
    assert z.shape == (2, 50_000, 4)
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 0.01
    assert np.all(np.isfinite(z))


def test_uniform_range_and_mean():
    u = CounterRNG(5).uniform(Stream.DATA, 0, 3, 100_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / u.size)


def test_counter_addressing_is_stateless(rng):
    a = rng.normal(Stream.STEP, 4, 3, components=[10, 11, 12], lanes=[7, 8])
    b = rng.normal(Stream.STEP, 4, 3, components=[12, 10], lanes=[8])
    np.testing.assert_array_equal(b[0, 0], a[1, 2])
    np.testing.assert_array_equal(b[0, 1], a[1, 0])
    again = CounterRNG(1234).normal(Stream.STEP, 4, 3, components=[10, 11, 12], lanes=[7, 8])
    np.testing.assert_array_equal(a, again)


def test_streams_steps_and_seeds_differ(rng):
    base = rng.normal(Stream.STEP, 0, 3, 4)
    assert not np.array_equal(base, rng.normal(Stream.STEP + 1, 0, 3, 4))
    assert not np.array_equal(base, rng.normal(Stream.STEP, 1, 3, 4))
    assert not np.array_equal(base, CounterRNG(1235).normal(Stream.STEP, 0, 3, 4))
    assert not np.array_equal(base, rng.normal(Stream.PRIOR, 0, 3, 4))


def test_negative_ids_rejected(rng):
    with pytest.raises(ValueError):
        rng.normal(Stream.STEP, 0, 3, components=[-1])
