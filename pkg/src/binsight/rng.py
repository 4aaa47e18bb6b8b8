"""Counter-based deterministic random number generation.

Every random draw in this package is derived by hashing a (seed, stream,
counter) triple through the splitmix64 finalizer and converting the
resulting 64-bit words to floats. There is no shared generator state:
substreams are independent by construction, may be consumed in any order,
and produce bit-identical values on every platform. Gaussians come from
the Box-Muller transform applied to consecutive word pairs, so the k-th
gaussian of a substream is a pure function of (seed, stream, k).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

_TWO53 = float(1 << 53)


def mix64(x: int) -> int:
    """splitmix64 finalizer of a single 64-bit integer."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * _MIX_A) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX_B) & _MASK64
    return x ^ (x >> 31)


def _mix_array(x: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps modulo 2**64 for arrays, which is exactly
    # the behavior splitmix64 wants
    x = x.copy()
    x ^= x >> np.uint64(30)
    x *= np.uint64(_MIX_A)
    x ^= x >> np.uint64(27)
    x *= np.uint64(_MIX_B)
    x ^= x >> np.uint64(31)
    return x


def words(seed: int, stream: int, count: int, offset: int = 0) -> np.ndarray:
    """Words offset .. offset+count-1 of substream (seed, stream), as uint64."""
    if count < 0:
        raise ValueError("count must be non-negative")
    base = mix64(mix64(seed) + (stream * _GOLDEN & _MASK64))
    ctr = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    ctr *= np.uint64(_GOLDEN)
    ctr += np.uint64(base)
    return _mix_array(ctr)


def uniforms(seed: int, stream: int, count: int, offset: int = 0) -> np.ndarray:
    """float64 uniforms in [0, 1)."""
    w = words(seed, stream, count, offset)
    return (w >> np.uint64(11)).astype(np.float64) / _TWO53


def _box_muller(w: np.ndarray, count: int) -> np.ndarray:
    u1 = ((w[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) / _TWO53  # (0, 1]
    u2 = (w[1::2] >> np.uint64(11)).astype(np.float64) / _TWO53          # [0, 1)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * np.pi) * u2
    out = np.empty(w.size, dtype=np.float64)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:count]


def gaussians(seed: int, stream: int, count: int) -> np.ndarray:
    """float64 standard normals; pair 2k,2k+1 shares one Box-Muller draw."""
    pairs = (count + 1) // 2
    return _box_muller(words(seed, stream, 2 * pairs), count)


def permutation(seed: int, stream: int, n: int) -> np.ndarray:
    """Deterministic permutation of range(n): stable argsort of n words."""
    return np.argsort(words(seed, stream, n), kind="stable").astype(np.int64)


class CounterRng:
    """Stateful cursor over one (seed, stream) substream."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._offset = 0

    def _take(self, n: int) -> np.ndarray:
        w = words(self.seed, self.stream, n, self._offset)
        self._offset += n
        return w

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = float(self._take(1)[0] >> np.uint64(11)) / _TWO53
        return lo + (hi - lo) * u

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], both ends inclusive."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        return lo + int(self._take(1)[0] % np.uint64(span))

    def gauss(self, count: int) -> np.ndarray:
        pairs = (count + 1) // 2
        return _box_muller(self._take(2 * pairs), count)
