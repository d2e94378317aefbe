"""Deterministic random source.

All randomness in the package flows through :class:`Rng`, a thin wrapper
around numpy's PCG64 bit generator seeded via ``SeedSequence``. PCG64's
output stream for a given seed is fixed by numpy's bit-generator
compatibility policy, so identical seeds reproduce identical draw
sequences across runs and platforms.

Child streams are derived from an entropy *path* (root seed plus a list of
integer/string keys) instead of by splitting generator state; derivation
therefore never depends on how many draws the parent has made, which keeps
checkpoint-resume runs exactly reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"rng derivation keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"rng derivation keys must be int or str, got {type(key).__name__}")


class Rng:
    """Seeded deterministic generator (PCG64 behind ``numpy.random.Generator``)."""

    def __init__(self, seed: int, _entropy: tuple[int, ...] | None = None):
        if _entropy is None:
            if not isinstance(seed, (int, np.integer)) or seed < 0:
                raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
            _entropy = (int(seed),)
        self.seed = int(_entropy[0])
        self._entropy = _entropy
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(_entropy))))

    def derive(self, *keys) -> "Rng":
        """Independent child stream for (purpose, index, ...) keys."""
        return Rng(self.seed, self._entropy + tuple(_key_to_int(k) for k in keys))

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, loc: float, scale: float, shape=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        """Draw from [low, high) like numpy's Generator.integers."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n_or_seq):
        return self._gen.permutation(n_or_seq)

    def choice_weighted(self, items, k: int, weights: np.ndarray) -> list:
        """Weighted sampling of k items without replacement.

        Weights need not be normalized; zero-weight items are never chosen
        while enough positive-weight items remain.
        """
        items = list(items)
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(items),):
            raise ValueError(f"weights shape {w.shape} does not match {len(items)} items")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        total = w.sum()
        if total <= 0:
            raise ValueError("at least one weight must be positive")
        idx = self._gen.choice(len(items), size=k, replace=False, p=w / total)
        return [items[i] for i in idx]

    def __repr__(self) -> str:
        return f"Rng(entropy={self._entropy})"
