"""Deterministic random number generation.

All stochastic code in the package draws from :class:`SeededRng`, a thin
wrapper over numpy's counter-based Philox bit generator.  Normal deviates are
produced by an explicit Box-Muller transform on Philox uniforms rather than
by the Generator's own ziggurat sampler, so the exact stream is pinned by
this module and not by numpy internals that may change between releases.

The same seed always yields the same stream; byte-reproducible CLI output
rests on this class.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

_TWO_PI = 2.0 * np.pi


class SeededRng:
    """Deterministic random source (Philox counters, Box-Muller normals)."""

    def __init__(self, seed: int):
        if not isinstance(seed, (int, np.integer)):
            raise ValidationError(f"seed must be an integer, got {type(seed).__name__}")
        if not 0 <= int(seed) < 2**64:
            raise ValidationError(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, shape: int | tuple[int, ...] = ()) -> np.ndarray:
        """Uniforms on [0, 1) as float64."""
        return self._gen.random(shape, dtype=np.float64)

    def normal(self, shape: int | tuple[int, ...] = ()) -> np.ndarray:
        """Standard normal deviates via Box-Muller on Philox uniforms."""
        if isinstance(shape, (int, np.integer)):
            shape = (int(shape),)
        count = int(np.prod(shape)) if shape else 1
        half = (count + 1) // 2
        # 1 - U keeps the log argument in (0, 1]; U itself may be exactly 0.
        u1 = 1.0 - self._gen.random(half, dtype=np.float64)
        u2 = self._gen.random(half, dtype=np.float64)
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([radius * np.cos(_TWO_PI * u2), radius * np.sin(_TWO_PI * u2)])
        return z[:count].reshape(shape)

    def integers(self, low: int, high: int, size: int) -> np.ndarray:
        """Uniform integers in [low, high), sampled with replacement."""
        if high <= low:
            raise ValidationError(f"empty integer range [{low}, {high})")
        return self._gen.integers(low, high, size=size, dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
