"""Counter-based random streams keyed by (seed, replica, purpose).

Every uniform variate is a pure function of its key and position, computed
with the Philox4x32-10 bijection.  Replicas therefore never share state, and
the same replica produces the same draws whether it is simulated alone, in a
vectorized batch, or on another worker.
"""
from __future__ import annotations

import enum
import math

import numpy as np

__all__ = [
    "Purpose",
    "Stream",
    "philox4x32",
    "uniform_pairs",
    "uniforms",
]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


class Purpose(enum.IntEnum):
    """Independent sub-stream tags for one replica."""

    DYNAMICS = 0
    INITIAL = 1
    CHAIN = 2
    COUPLING = 3
    ENSEMBLE = 4
    PARTICLES = 5
    BOOTSTRAP = 6


def philox4x32(counter, key, rounds=10):
    """Philox4x32 block function, vectorized over the leading axis.

    Parameters
    ----------
    counter : array_like, shape (..., 4)
        Four 32-bit counter words.
    key : array_like, shape (..., 2)
        Two 32-bit key words.

    Returns
    -------
    ndarray of uint32, shape (..., 4)
    """
    ctr = np.asarray(counter, dtype=np.uint64) & _MASK32
    k = np.asarray(key, dtype=np.uint64) & _MASK32
    c0, c1, c2, c3 = (ctr[..., j].copy() for j in range(4))
    k0, k1 = k[..., 0].copy(), k[..., 1].copy()
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def _split64(x):
    x = np.asarray(x, dtype=np.uint64)
    return x & _MASK32, x >> _SHIFT32


def _blocks(seed, replica, purpose, block):
    """Uniforms for counter blocks; each block yields two doubles in (0, 1)."""
    replica, block = np.broadcast_arrays(
        np.asarray(replica, dtype=np.uint64), np.asarray(block, dtype=np.uint64)
    )
    b_lo, b_hi = _split64(block)
    ctr = np.stack(
        [b_lo, b_hi, replica & _MASK32,
         np.full(replica.shape, int(purpose), dtype=np.uint64)],
        axis=-1,
    )
    s_lo, s_hi = _split64(np.uint64(seed))
    key = np.broadcast_to(np.stack([s_lo, s_hi]), ctr.shape[:-1] + (2,))
    words = philox4x32(ctr, key).astype(np.uint64)
    # 53 random bits per double, centred in its cell so 0 and 1 never occur
    hi = (words[..., 0::2] >> np.uint64(5)) << np.uint64(26)
    lo = words[..., 1::2] >> np.uint64(6)
    return ((hi | lo).astype(np.float64) + 0.5) * 2.0**-53


def uniforms(seed, replica, draw, purpose=Purpose.DYNAMICS):
    """Uniform variate number ``draw`` of stream (seed, replica, purpose).

    ``replica`` and ``draw`` broadcast against each other, so a whole
    ensemble's k-th draws can be produced in one call.
    """
    replica, draw = np.broadcast_arrays(
        np.asarray(replica, dtype=np.uint64), np.asarray(draw, dtype=np.uint64))
    pairs = _blocks(seed, replica, purpose, draw >> np.uint64(1))
    lane = (draw & np.uint64(1)).astype(np.intp)
    return np.take_along_axis(pairs, lane[..., None], axis=-1)[..., 0]


def uniform_pairs(seed, replica, block, purpose=Purpose.DYNAMICS):
    """Draws ``2*block`` and ``2*block + 1`` of each stream, shape (..., 2)."""
    return _blocks(seed, replica, purpose, block)


def _check_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


class Stream:
    """Sequential view of one (seed, replica, purpose) stream.

    Draw ``k`` of a Stream equals ``uniforms(seed, replica, k, purpose)``.
    """

    __slots__ = ("seed", "replica", "purpose", "_buf", "_pos", "_next_block", "_chunk")

    def __init__(self, seed, replica=0, purpose=Purpose.DYNAMICS, chunk=256, prefetched=None):
        self.seed = _check_seed(seed)
        if not 0 <= int(replica) < 2**32:
            raise ValueError("replica index must fit in 32 bits")
        self.replica = int(replica)
        self.purpose = Purpose(purpose)
        self._chunk = int(chunk)
        self._buf = []
        self._pos = 0
        self._next_block = 0
        if prefetched is not None:
            if len(prefetched) % 2:
                raise ValueError("prefetched draws must cover whole blocks")
            self._buf = list(prefetched)
            self._next_block = len(self._buf) // 2

    @classmethod
    def batch(cls, seed, replicas, purpose=Purpose.DYNAMICS, prefetch=64, chunk=256):
        """Streams for many replicas, their first ``prefetch`` draws computed at once."""
        replicas = np.asarray(replicas, dtype=np.uint64)
        prefetch += prefetch % 2
        if replicas.size == 0:
            return []
        blocks = np.arange(prefetch // 2, dtype=np.uint64)
        draws = _blocks(seed, replicas[:, None], purpose, blocks[None, :])
        draws = draws.reshape(len(replicas), prefetch).tolist()
        return [cls(seed, int(r), purpose, chunk, d) for r, d in zip(replicas, draws)]

    def _refill(self):
        blocks = np.arange(self._next_block, self._next_block + self._chunk, dtype=np.uint64)
        self._buf = _blocks(self.seed, self.replica, self.purpose, blocks).ravel().tolist()
        self._next_block += self._chunk
        self._pos = 0

    @property
    def position(self):
        """Number of uniforms consumed so far."""
        return 2 * self._next_block - len(self._buf) + self._pos

    def random(self):
        if self._pos == len(self._buf):
            self._refill()
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def exponential(self, rate):
        return -math.log(self.random()) / rate

    def random_array(self, size):
        return np.array([self.random() for _ in range(int(size))])

    def randbelow(self, k):
        """Uniform integer in ``[0, k)``."""
        return min(int(self.random() * k), k - 1)

    def spawn(self, purpose):
        """Sibling stream of the same replica with another purpose."""
        return Stream(self.seed, self.replica, purpose, self._chunk)

    def __repr__(self):
        return (f"Stream(seed={self.seed}, replica={self.replica}, "
                f"purpose={self.purpose.name}, position={self.position})")
