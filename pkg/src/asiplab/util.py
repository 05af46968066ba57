"""Small shared helpers: deterministic work partitioning and reductions.

Replicates are partitioned into fixed-size blocks labelled by block index, and
per-block randomness is derived from the block label alone.  Threads only
distribute blocks; partial results are always combined in block order, so a
run's output is byte-identical no matter how many workers executed it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

DEFAULT_BLOCK = 256


def replicate_blocks(total: int, block_size: int = DEFAULT_BLOCK):
    """[(block_index, count), ...] covering ``total`` replicates."""
    out = []
    b = 0
    left = total
    while left > 0:
        take = min(block_size, left)
        out.append((b, take))
        left -= take
        b += 1
    return out


def ordered_map(fn, items, threads: int = 1):
    """Map preserving item order; threads > 1 distributes work but never
    changes the order in which results are combined."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def combine_mean_stderr(sums, sumsqs, count: int):
    """Ensemble mean and standard error from per-block Σx and Σx² partials."""
    mean = sums / count
    if count > 1:
        var = np.maximum(sumsqs - count * mean**2, 0.0) / (count - 1)
        stderr = np.sqrt(var / count)
    else:
        stderr = np.zeros_like(mean)
    return mean, stderr


def least_squares_line(x: np.ndarray, y: np.ndarray):
    """(slope, intercept, r_squared) of a simple linear regression."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm = x.mean()
    ym = y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        return 0.0, ym, 1.0
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    syy = float(((y - ym) ** 2).sum())
    r2 = 1.0 if syy == 0.0 else 1.0 - float((resid**2).sum()) / syy
    return slope, intercept, r2
