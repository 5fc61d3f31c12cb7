"""Seeded Laplace noise and the baseline Laplace Perturbation Algorithm.

Every randomized module draws from a :class:`NoiseSource`, a counter-based
Philox stream keyed by SHA-256 of (master seed, substream path).  Substreams
derived for different module instances are statistically independent and
reproducible, which is what lets a scheme built from several noisy modules be
replayed bit-for-bit from a single seed.

Laplace samples come from the inverse CDF applied to uniforms drawn on the
open interval (0, 1), so no draw can degenerate to +-inf.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .core import BudgetLedger, Histogram, NoisyHistogram

#: Distinguished scale meaning "discard this value, never sample".
INFINITE = math.inf

_U53 = float(1 << 53)


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 64-bit child seed for (master seed, path)."""
    digest = _digest(master_seed, parts)
    return int.from_bytes(digest[:8], "little")


def _digest(master_seed: int, parts) -> bytes:
    text = str(int(master_seed)) + "/" + "/".join(str(p) for p in parts)
    return hashlib.sha256(b"dphist:" + text.encode("utf-8")).digest()


class NoiseSource:
    """Single-owner Laplace sampler with reproducible substreams."""

    __slots__ = ("seed", "path", "_rng")

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        key = np.frombuffer(_digest(self.seed, self.path)[:16], dtype=np.uint64)
        self._rng = np.random.Generator(np.random.Philox(key=key))

    def substream(self, *parts) -> "NoiseSource":
        """Independent child stream for a module instance id."""
        return NoiseSource(self.seed, self.path + tuple(str(p) for p in parts))

    def _open_uniform(self, size):
        # integers in [1, 2^53 - 1] keep the uniform strictly inside (0, 1)
        k = self._rng.integers(1, 1 << 53, size=size, dtype=np.int64)
        return k / _U53

    def laplace(self, scale: float, size=None):
        """Draw from Lap(0, scale) by inverse CDF; advances the stream."""
        if not (scale > 0) or math.isinf(scale):
            raise ValueError(f"Laplace scale must be positive and finite, got {scale}")
        u = self._open_uniform(size) - 0.5
        x = -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
        return float(x) if size is None else x

    def standard_laplace(self, size=None):
        return self.laplace(1.0, size=size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high); used by the evaluation harness."""
        return self._rng.integers(low, high, size=size)


def sample_laplace(src: NoiseSource, lam: float) -> float:
    """One draw from Lap(0, lam).

    Callers holding a pruned/infinite scale must branch before sampling;
    passing INFINITE here is a contract violation, not a silent no-op.
    """
    if math.isinf(lam):
        raise ValueError("cannot sample at infinite scale; value must be discarded")
    return src.laplace(lam)


def lpa(h: Histogram, eps: float, src: NoiseSource, ledger: BudgetLedger) -> NoisyHistogram:
    """Laplace Perturbation Algorithm: each bin + Lap(1/eps), charging eps."""
    if not eps > 0:
        raise ValueError("lpa requires eps > 0")
    ledger.spend("lpa", eps)
    noisy = h.values + src.laplace(1.0 / eps, size=h.n)
    return NoisyHistogram(noisy, h.labels)
