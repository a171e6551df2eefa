"""Counter-based pseudo-random generator with a platform-stable stream.

SplitMix64 over an incrementing counter: draw i of seed s mixes
(s + (i+1)*GOLDEN) through two xor-multiply rounds. Everything is uint64
arithmetic on numpy arrays, so a given seed yields bit-identical streams
across processes, platforms, and numpy versions.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
# 2**-53, spacing of doubles in [0, 1)
_INV53 = 1.0 / float(1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    # uint64 wraparound is the point; silence numpy's overflow warnings
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def mix_scalar(x: int) -> int:
    """One SplitMix64 mixing round on a plain int, for deriving sub-seeds."""
    with np.errstate(over="ignore"):
        z = np.uint64(x & 0xFFFFFFFFFFFFFFFF) + _GOLDEN
    return int(_mix(np.uint64(z)))


class Rng:
    """Deterministic generator; state is (seed, counter) and nothing else."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + idx * _GOLDEN)

    def uniform(self, shape=()) -> np.ndarray:
        """Doubles in [0, 1), one raw draw each."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV53
        return u.reshape(shape)

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals via Box-Muller on consecutive uniform pairs."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        raw = self._raw(2 * m)
        # (0, 1] for the log, [0, 1) for the angle
        u1 = ((raw[:m] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV53
        u2 = (raw[m:] >> np.uint64(11)).astype(np.float64) * _INV53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return out.reshape(shape)

    def integers(self, lo: int, hi: int, shape=()) -> np.ndarray:
        """Uniform ints in [lo, hi), from the top 53 bits of each draw."""
        if hi <= lo:
            raise ValueError(f"empty integer range [{lo}, {hi})")
        u = self.uniform(shape)
        return (lo + np.floor(u * (hi - lo))).astype(np.int64)

    def simplex(self, c: int) -> np.ndarray:
        """A point in the interior of the probability simplex (Dirichlet(1))."""
        u = self.uniform((c,))
        e = -np.log(1.0 - u)
        e = np.maximum(e, 1e-300)
        return e / e.sum()

    def fork(self, tag: int) -> "Rng":
        """Independent substream derived from (seed, tag); self is untouched."""
        return Rng(mix_scalar(self.seed ^ mix_scalar(tag)))


def _as_shape(shape) -> tuple:
    if isinstance(shape, int):
        return (shape,)
    return tuple(shape)
