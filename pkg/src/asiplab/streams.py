"""Seeded, splittable innovation streams.

All randomness in the lab flows through :class:`InnovationStream`.  A stream
is identified by a 64-bit seed and a lineage label (a tuple of ints/strings
recording how it was split off its parent).  Identical (seed, label) pairs
reproduce identical draws bit for bit, which is what makes common-random-number
coupling and thread-count-independent reductions possible: work is partitioned
by label, never by "whatever the shared generator happens to produce next".

The underlying bit generator is Philox (counter based), keyed by a SHA-256
digest of the label path, so sibling streams are independent by construction.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import InvalidInputError

Label = tuple


def _spawn_key(label: Label) -> tuple:
    digest = hashlib.sha256(repr(label).encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4))


class InnovationStream:
    """A reproducible, splittable source of innovations."""

    __slots__ = ("seed", "label", "_generator")

    def __init__(self, seed: int, label: Label = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {seed}")
        for part in label:
            if not isinstance(part, (int, str)):
                raise InvalidInputError(f"label parts must be int or str, got {part!r}")
        self.seed = seed
        self.label = tuple(label)
        self._generator = None

    def split(self, *path) -> "InnovationStream":
        """Child stream labelled by extending this stream's lineage path."""
        return InnovationStream(self.seed, self.label + path)

    def fresh(self) -> "InnovationStream":
        """Copy of this stream rewound to position zero."""
        return InnovationStream(self.seed, self.label)

    def generator(self) -> np.random.Generator:
        """A new generator at position zero (replays the same sequence)."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=_spawn_key(self.label))
        return np.random.Generator(np.random.Philox(seq))

    @property
    def rng(self) -> np.random.Generator:
        """Stateful generator; drawing from it advances this stream."""
        if self._generator is None:
            self._generator = self.generator()
        return self._generator

    def __repr__(self) -> str:
        return f"InnovationStream(seed={self.seed}, label={self.label!r})"
