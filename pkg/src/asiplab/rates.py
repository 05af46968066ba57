"""Rate-index calculators and the discrepancy-envelope fit.

The calculators turn model parameters into the indices controlling the
strong-approximation rate (a power of log n); the envelope fit extracts that
power from measured discrepancy series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import util
from .errors import InvalidInputError
from .streams import InnovationStream


@dataclass(frozen=True)
class ARIndices:
    gamma1: float
    gamma2: float
    lam: float
    rate_power: float


def ar_indices(eta: float, tau: float, zeta: float) -> ARIndices:
    """Indices of the Lipschitz autoregression with innovation tail index eta,
    drift exponent tau, and observable growth exponent zeta:

        gamma1 = eta (1 - tau) / (eta (1 - tau) + tau)
        gamma2 = eta (1 - tau) / zeta    (inf when zeta = 0)

    and the rate power 1 + 1/gamma1 + 1/gamma2.
    """
    if not 0 < eta <= 1:
        raise InvalidInputError("eta must lie in (0, 1]")
    if not 0 <= tau < 1:
        raise InvalidInputError("tau must lie in [0, 1)")
    if not 0 <= zeta <= 1:
        raise InvalidInputError("zeta must lie in [0, 1]")
    if tau + zeta <= 0:
        raise InvalidInputError("tau + zeta must be positive")
    g1 = eta * (1.0 - tau) / (eta * (1.0 - tau) + tau)
    g2 = math.inf if zeta == 0 else eta * (1.0 - tau) / zeta
    lam = 1.0 / g1 + (0.0 if math.isinf(g2) else 1.0 / g2)
    return ARIndices(gamma1=g1, gamma2=g2, lam=lam, rate_power=1.0 + lam)


def matrix_rate_power(gamma: float, super_exponential=None) -> float:
    """Rate power of the matrix cocycle approximation: 1 + 2/gamma for a
    sub-exponential moment index gamma <= 1, 2 + 1/gamma for a
    super-exponential one (gamma > 1), and 2 in the compact-support limit
    (gamma = inf)."""
    if not gamma > 0:
        raise InvalidInputError("gamma must be positive")
    if math.isinf(gamma):
        return 2.0
    if super_exponential is not None and super_exponential != (gamma > 1):
        raise InvalidInputError(
            "super_exponential flag inconsistent with gamma "
            f"(gamma={gamma} implies {gamma > 1})"
        )
    if gamma > 1:
        return 2.0 + 1.0 / gamma
    return 1.0 + 2.0 / gamma


@dataclass
class RateEnvelopeFit:
    exponent: float  # p-hat of D ~ C (log n)^p
    scale: float  # C lifted so the envelope dominates the data
    ci_low: float
    ci_high: float
    bootstrap: int


def _fit_exponent(n_grid: np.ndarray, d_mean: np.ndarray) -> float:
    pos = d_mean > 0
    if pos.sum() < 2:
        return 0.0
    x = np.log(np.log(n_grid[pos].astype(float)))
    y = np.log(d_mean[pos])
    slope, _, _ = util.least_squares_line(x, y)
    return float(slope)


def fit_rate_envelope(n_grid, d_paths, bootstrap: int = 200,
                      stream: InnovationStream | None = None) -> RateEnvelopeFit:
    """Least squares of log D on log log n, with the scale lifted so the fit
    dominates every point, and a path-bootstrap confidence interval.

    ``d_paths`` is (replicates, len(n_grid)); a single series may be passed as
    one row.  An identically-zero series is reported as exponent 0.
    """
    n_grid = np.asarray(sorted(int(n) for n in n_grid))
    d = np.atleast_2d(np.asarray(d_paths, dtype=float))
    if d.shape[1] != n_grid.size:
        raise InvalidInputError("d_paths columns must match the n grid")
    if n_grid.size < 4 or n_grid[-1] < 9 * n_grid[0]:
        raise InvalidInputError("need >= 4 points spanning two powers of 3")
    if np.any(n_grid < 2):
        raise InvalidInputError("grid entries must be >= 2 for log log n")
    mean = d.mean(axis=0)
    p_hat = _fit_exponent(n_grid, mean)
    logs = np.log(np.log(n_grid.astype(float)))
    with np.errstate(divide="ignore"):
        scale = float(np.max(mean / np.exp(p_hat * logs))) if mean.max() > 0 else 0.0
    r = d.shape[0]
    if r > 1 and bootstrap > 0:
        rng = (stream or InnovationStream(0, ("bootstrap",))).generator()
        stats = np.empty(bootstrap)
        for b in range(bootstrap):
            idx = rng.integers(0, r, size=r)
            stats[b] = _fit_exponent(n_grid, d[idx].mean(axis=0))
        lo, hi = np.quantile(stats, [0.025, 0.975])
        lo, hi = min(lo, p_hat), max(hi, p_hat)
    else:
        lo = hi = p_hat
    return RateEnvelopeFit(
        exponent=p_hat, scale=scale, ci_low=float(lo), ci_high=float(hi),
        bootstrap=bootstrap,
    )
