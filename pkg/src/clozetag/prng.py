"""Deterministic pseudo-random primitives for reproducible sampling.

All experiment randomness (k-shot selection, unlabeled-pool shuffling,
minibatch order) flows through the SplitMix64 generator below so that a
(seed, input order) pair selects the same elements in any conforming
implementation, independent of the host language's RNG.

The algorithm is pinned exactly:

* State update: ``state = (state + 0x9E3779B97F4A7C15) mod 2**64``.
* Output mix of the updated state ``z``::

      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  mod 2**64
      z = (z ^ (z >> 27)) * 0x94D049BB133111EB  mod 2**64
      return z ^ (z >> 31)

* Bounded draws use rejection sampling: draw 64-bit values, discard any
  ``>= floor(2**64 / n) * n``, return ``value mod n``.  This removes
  modulo bias without floating point.
* ``shuffle`` is a Fisher-Yates pass from index 0 upward: at step ``i``
  swap position ``i`` with ``i + bounded(len - i)``.
* ``sample_indices(n, k, seed)`` runs the first ``k`` steps of that
  shuffle over ``[0, n)`` and returns the selected indices sorted
  ascending.
"""

from __future__ import annotations

from typing import Iterator, MutableSequence

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """Tiny 64-bit generator with a one-word state."""

    __slots__ = ("_state",)

    def __init__(self, seed: int) -> None:
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = ((1 << 64) // n) * n
        while True:
            value = self.next_u64()
            if value < limit:
                return value % n

    def shuffle(self, items: MutableSequence) -> None:
        """In-place Fisher-Yates shuffle, front to back."""
        n = len(items)
        for i in range(n - 1):
            j = i + self.next_below(n - i)
            items[i], items[j] = items[j], items[i]

    def iter_u64(self) -> Iterator[int]:
        while True:
            yield self.next_u64()


def sample_indices(n: int, k: int, seed: int) -> list[int]:
    """Select min(k, n) distinct indices from [0, n), sorted ascending.

    Runs the first k swap steps of the seeded Fisher-Yates shuffle and
    keeps the prefix, so the selection is uniform without replacement.
    """
    k = min(k, n)
    if k <= 0:
        return []
    rng = SplitMix64(seed)
    pool = list(range(n))
    for i in range(k):
        j = i + rng.next_below(n - i)
        pool[i], pool[j] = pool[j], pool[i]
    return sorted(pool[:k])


def shuffled_indices(n: int, seed: int) -> list[int]:
    """Full seeded permutation of [0, n)."""
    rng = SplitMix64(seed)
    pool = list(range(n))
    rng.shuffle(pool)
    return pool
