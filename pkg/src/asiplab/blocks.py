"""The deterministic block skeleton behind the strong approximation.

Time is partitioned into blocks (3^{k-1}, 3^k].  Block k carries a truncation
level M_k = c1 k^(1/gamma2) and a dependence lag m_k = floor(c2 k^(1/gamma1)) + 1,
with c1 and c2 tied to the tail and decay profiles so that two identities hold
exactly:

    3^k = exp((M_k / b)^gamma2 / 2)        (finite gamma2)
    c * c2^gamma1 = 2 log 3

gamma2 = inf means the observable is bounded by b almost surely; then M_k = b
for every k and clipping is inactive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

LOG3 = math.log(3.0)


def block_index(n: int) -> int:
    """The unique h with 3^(h-1) < n <= 3^h, by exact integer comparison."""
    n = int(n)
    if n < 2:
        raise InvalidInputError("block index defined for n >= 2")
    h = 1
    power = 3
    while n > power:
        power *= 3
        h += 1
    return h


@dataclass(frozen=True)
class BlockScheme:
    gamma1: float
    gamma2: float
    c: float
    b: float

    def __post_init__(self):
        if self.gamma1 <= 0 or self.c <= 0 or self.b <= 0:
            raise InvalidInputError("gamma1, c, b must be positive")
        if self.gamma2 <= 0:
            raise InvalidInputError("gamma2 must be positive (inf allowed)")

    @property
    def c1(self) -> float:
        if math.isinf(self.gamma2):
            return self.b
        return self.b * (2.0 * LOG3) ** (1.0 / self.gamma2)

    @property
    def c2(self) -> float:
        return (2.0 * LOG3 / self.c) ** (1.0 / self.gamma1)

    @property
    def alpha(self) -> float:
        lam = 1.0 / self.gamma1 + (0.0 if math.isinf(self.gamma2) else 1.0 / self.gamma2)
        return 1.0 + lam

    def clip_level(self, k: int) -> float:
        """M_k."""
        if k < 1:
            raise InvalidInputError("block numbers start at 1")
        if math.isinf(self.gamma2):
            return self.b
        return self.c1 * float(k) ** (1.0 / self.gamma2)

    def lag(self, k: int) -> int:
        """m_k."""
        if k < 1:
            raise InvalidInputError("block numbers start at 1")
        return int(math.floor(self.c2 * float(k) ** (1.0 / self.gamma1))) + 1

    def block_range(self, k: int):
        """(first, last) indices of block k, i.e. (3^(k-1), 3^k]."""
        if k < 1:
            raise InvalidInputError("block numbers start at 1")
        return 3 ** (k - 1) + 1, 3**k

    def k0(self) -> int:
        """Smallest k0 with m_l <= 3^(l-1) for every l >= k0: below it the
        dependence window does not fit inside the previous blocks and those
        blocks are passed through the pipeline uncoupled."""
        k = 1
        last_violation = 0
        while True:
            if self.lag(k) > 3 ** (k - 1):
                last_violation = k
            # lags grow polynomially, the bound exponentially: once a block and
            # its successor are clear with slack, nothing later can violate
            elif self.lag(k) * 9 <= 3 ** (k - 1):
                return last_violation + 1
            k += 1

    def table(self, k_max: int):
        """Rows (k, M_k, m_k, block_start, block_end) for k <= k_max."""
        rows = []
        for k in range(1, k_max + 1):
            lo, hi = self.block_range(k)
            rows.append((k, self.clip_level(k), self.lag(k), lo, hi))
        return rows


def clip_center(x, k: int, scheme: BlockScheme, clip_mean: float):
    """phi_k(x) - E phi_k(X_1), with phi_k the clip to [-M_k, M_k].

    ``clip_mean`` is the (estimated or exact) expectation of the clipped
    observable, supplied by the caller and cached per (model, k)."""
    m = scheme.clip_level(k)
    return np.clip(np.asarray(x, dtype=float), -m, m) - clip_mean
