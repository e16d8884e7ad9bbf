"""
Deterministic random number generation.

One generator algorithm is used repo-wide: numpy's PCG64 bit generator,
seeded directly from a 64-bit integer. PCG64 output is specified by numpy
and identical across platforms for the same seed, so patch sampling, weight
initialisation and CV shuffles reproduce on any machine.
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from histotnet.errors import ValidationError

ALGORITHM = "PCG64"
_SEED_MASK = (1 << 64) - 1


class Rng:
    """Single-owner deterministic generator. Do not share between threads."""

    def __init__(self, seed: int = 0, _sequence: Optional[np.random.SeedSequence] = None):
        if _sequence is None:
            if seed < 0 or seed > _SEED_MASK:
                raise ValidationError(f"Seed must be a 64-bit unsigned integer, got {seed}")
            _sequence = np.random.SeedSequence(int(seed))
        self.seed = int(seed)
        self._sequence = _sequence
        self._generator = np.random.Generator(np.random.PCG64(_sequence))

    @property
    def algorithm(self) -> str:
        return ALGORITHM

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def spawn(self, n: int) -> List["Rng"]:
        """Derive n independent child generators (per fold, per shuffle...)."""
        return [Rng(self.seed, _sequence=child) for child in self._sequence.spawn(n)]

    def integers(self, low: int, high: Optional[int] = None, size=None):
        """Integers in [low, high)."""
        return self._generator.integers(low, high, size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._generator.uniform(low, high, size=size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._generator.normal(loc, scale, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, items: Sequence, size=None, replace: bool = True):
        return self._generator.choice(items, size=size, replace=replace)

    def position(self, max_row: int, max_col: int) -> Tuple[int, int]:
        """Uniform (row, col) with 0 <= row <= max_row and 0 <= col <= max_col."""
        row = int(self._generator.integers(0, max_row + 1))
        col = int(self._generator.integers(0, max_col + 1))
        return row, col

    def seed_ints(self, n: int) -> List[int]:
        """n integers usable as random_state by libraries that want an int seed."""
        return [int(v) for v in self._generator.integers(0, 2**31 - 1, size=n)]

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, algorithm={ALGORITHM})"
