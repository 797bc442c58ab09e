"""Deterministic splitmix64 streams.

Everything random in the package (weight init, shuffling, synthetic data)
draws from this generator so that a run is fully determined by its integer
seeds and can be replayed by any implementation of splitmix64.

Conventions:

* the k-th output (k = 1, 2, ...) of a stream seeded with ``s`` is
  ``mix(s + k * GAMMA mod 2**64)``;
* a uniform double is ``(u64 >> 11) * 2**-53``, so it lies in [0, 1);
* sub-streams are keyed with :func:`derive_seed`.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *tags: int) -> int:
    """Fold integer tags into a seed, e.g. ``derive_seed(seed, epoch)``."""
    state = seed & MASK64
    for tag in tags:
        state = mix64(state ^ mix64((tag & MASK64) + GAMMA))
    return state


class SplitMix64:
    """A splitmix64 stream with vectorised draws."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be a non-negative 64-bit integer")
        self.seed = seed & MASK64
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        ks = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        # uint64 array arithmetic wraps modulo 2**64
        states = np.uint64(self.seed) + ks * np.uint64(GAMMA)
        return _mix_array(states)

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """Standard normal draws via Box-Muller on pairs of uniforms."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1], keeps the log finite
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return z[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of ``range(n)``: argsort of fresh 64-bit keys."""
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")
