"""Counter-based random streams (Philox4x64-10).

Every Monte Carlo sample draws from its own stream keyed by ``(seed, stream)``
and indexed by a block counter, so results do not depend on the order in
which samples are evaluated. The block function is bit-compatible with
:class:`numpy.random.Philox`, which the test suite uses as an oracle.
"""

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO53 = 2.0 ** -53


@nb.njit(cache=True, inline="always")
def _mulhilo(a, b):
    a_lo = a & _MASK32
    a_hi = a >> _S32
    b_lo = b & _MASK32
    b_hi = b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _MASK32) + (hl & _MASK32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, a * b


@nb.njit(cache=True)
def philox_block(c0, c1, c2, c3, k0, k1):
    """One Philox4x64-10 block: four 64-bit words for counter ``c`` and key ``k``."""
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def to_unit(x):
    """Map a 64-bit word to a double in [0, 1) using its top 53 bits."""
    return float(x >> _S11) * _TWO53


@nb.njit(cache=True)
def stream_uniforms(seed, stream, n, offset=0):
    """``n`` uniforms from stream ``(seed, stream)`` starting at draw ``offset``.

    Draw ``k`` of a stream is word ``k % 4`` of block ``k // 4``; the block
    counter is ``(k // 4, 0, 0, 0)``.
    """
    k0 = np.uint64(seed)
    k1 = np.uint64(stream)
    out = np.empty(n)
    i = 0
    blk = (offset // 4)
    pos = offset % 4
    while i < n:
        w = philox_block(np.uint64(blk), np.uint64(0), np.uint64(0), np.uint64(0), k0, k1)
        while pos < 4 and i < n:
            out[i] = to_unit(w[pos])
            i += 1
            pos += 1
        pos = 0
        blk += 1
    return out


@nb.njit(cache=True)
def _normals_at(seed, stream_ids, step):
    # Box-Muller on the first two words of block (step, 1): independent of any
    # uniform stream, which uses c1 = 0.
    n = stream_ids.shape[0]
    out = np.empty(n)
    k0 = np.uint64(seed)
    for i in range(n):
        w = philox_block(np.uint64(step), np.uint64(1), np.uint64(0), np.uint64(0),
                         k0, np.uint64(stream_ids[i]))
        u1 = 1.0 - to_unit(w[0])
        u2 = to_unit(w[1])
        out[i] = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return out


def normals_at(seed, stream_ids, step):
    """Standard normal deviate for each stream at integer time index ``step``.

    The value depends only on ``(seed, stream_id, step)``, so any subset of
    paths can be advanced in any order and still reproduce the same draws.
    """
    ids = np.ascontiguousarray(stream_ids, dtype=np.uint64)
    return _normals_at(np.uint64(seed), ids, np.int64(step))


class StreamRNG:
    """Sequential view of one counter-based stream, for Python-level sampling.

    >>> StreamRNG(3, 0).uniform(2).shape
    (2,)
    """

    def __init__(self, seed, stream):
        self.seed = int(seed)
        self.stream = int(stream)
        self._offset = 0

    def uniform(self, n):
        out = stream_uniforms(np.uint64(self.seed), np.uint64(self.stream), int(n), int(self._offset))
        self._offset += int(n)
        return out

    def normal(self, n):
        u = self.uniform(2 * int(n)).reshape(2, -1)
        return np.sqrt(-2.0 * np.log1p(-u[0])) * np.cos(2.0 * np.pi * u[1])
