"""
Fixed 64-bit counter generator used by every stochastic routine.

Draw i (counting from 1) of a stream with seed s is

    z = s + i * 0x9E3779B97F4A7C15            (mod 2^64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   (mod 2^64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB   (mod 2^64)
    z = z ^ (z >> 31)

which is SplitMix64 written in counter form. Uniforms take the top 53 bits,
u = (z >> 11) * 2^-53, so u lies in [0, 1). Normals use Box-Muller on two
consecutive uniforms. Nothing here touches numpy's global RNG state.
"""
import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
UINT64_MAX = 2**64 - 1

_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_POW_M53 = 2.0 ** -53


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * MIX1
    z = (z ^ (z >> _S27)) * MIX2
    return z ^ (z >> _S31)


class SplitMix64:
    """Seeded stream of 64-bit outputs; every call advances the counter."""

    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0 or seed > UINT64_MAX:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.counter = 0

    def next_uint64(self, size: int) -> np.ndarray:
        """Raw 64-bit outputs, shape (size,)"""
        size = int(size)
        # uint64 array arithmetic wraps modulo 2^64 without warnings
        idx = np.arange(self.counter + 1, self.counter + size + 1, dtype=np.uint64)
        self.counter += size
        return _mix(idx * GAMMA + np.uint64(self.seed))

    def random(self, size) -> np.ndarray:
        """Uniforms on [0, 1) with the requested shape"""
        shape = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape)) if shape else 1
        u = (self.next_uint64(count) >> _S11).astype(np.float64) * _TWO_POW_M53
        return u.reshape(shape)

    def normal(self, size) -> np.ndarray:
        """Standard normals via Box-Muller"""
        shape = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape)) if shape else 1
        u = self.random(2 * count)
        radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        return (radius * np.cos(2.0 * np.pi * u[1::2])).reshape(shape)

    def integers(self, high: int, size) -> np.ndarray:
        """Integers uniform on {0, ..., high - 1}"""
        u = self.random(size)
        return np.minimum(np.floor(u * high).astype(np.int64), int(high) - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of range(n)"""
        return np.argsort(self.random(int(n)), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), in draw order"""
        return self.permutation(n)[: int(k)]
