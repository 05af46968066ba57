"""Covariance structure of the observable process.

Everything here is an ensemble (across-replicate) estimator at a fixed time
origin rather than a single-path time average: stationary expectations are
estimated by independent stationary copies, which costs more simulation but
gives honest standard errors.

The m-dependent approximation replaces X_j by its conditional expectation
given the last m+1 innovations.  That conditional mean is realized by replay:
freeze the innovation window, draw fresh stationary pasts, push them through
the frozen window, and average.  The inner-resample count biases the tilde
covariances by O(Var / n_inner), which is why it is exposed as a parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import util
from .blocks import BlockScheme, clip_center
from .coeffs import DecayFit, TailFit
from .errors import InvalidInputError, NumericalError, TailTruncationError
from .models import Model
from .streams import InnovationStream


def clip_mean(model: Model, level: float, stream: InnovationStream, draws: int = 100_000):
    """E phi(X_1) for the clip at ``level``.

    Exactly zero when the model declares a symmetric observable (the clip is
    odd); otherwise a Monte Carlo estimate with ``draws`` stationary samples.
    """
    if model.observable_symmetric:
        return 0.0
    from .models import observable_samples

    xs = observable_samples(model, draws, stream)
    return float(np.clip(xs, -level, level).mean())


def ensemble_cov(a: np.ndarray, b: np.ndarray):
    """Covariance across replicates with its standard error."""
    pa = a - a.mean()
    pb = b - b.mean()
    prod = pa * pb
    n = prod.size
    est = float(prod.mean())
    err = float(prod.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return est, err


@dataclass
class CovarianceSet:
    lags: np.ndarray
    gamma: np.ndarray
    stderr: np.ndarray
    gamma_trunc: dict = field(default_factory=dict)  # k -> array over lags
    gamma_tilde: dict = field(default_factory=dict)  # k -> array (0 beyond m_k)
    tilde_stderr: dict = field(default_factory=dict)
    replicates: int = 0


@dataclass
class VarianceEstimate:
    sigma2: float
    method: str
    n_grid: np.ndarray
    var_over_n: np.ndarray
    stderr: np.ndarray
    cross_check: float | None = None  # covariance-sum route
    nu_k: dict = field(default_factory=dict)
    noise_dominated: bool = False


class CovarianceEstimator:
    """Shared ensemble of stationary trajectories with recorded innovations.

    Plain, truncated, and m-dependent covariances computed from the *same*
    draws are exactly comparable: an inactive clip reproduces the plain
    estimate bit for bit.
    """

    def __init__(
        self,
        model: Model,
        length: int,
        replicates: int,
        stream: InnovationStream,
        burn_in=None,
        pool_size: int = 4096,
        center: float = 0.0,
    ):
        if length < 2:
            raise InvalidInputError("ensemble length must be at least 2")
        self.model = model
        self.length = length
        self.replicates = replicates
        self.stream = stream
        self.center = float(center)
        states = model.stationary_states(
            (replicates,), stream.split("start"), burn_in=burn_in
        )
        rng = stream.split("innov").generator()
        self.x = np.empty((replicates, length))
        innov_shape = (replicates, length) + model.innovation_shape
        self.innovations = np.empty(innov_shape)
        for t in range(length):
            innov = model.draw_innovations(rng, (replicates,))
            self.innovations[:, t] = innov
            self.x[:, t] = model.observe(states, innov) - self.center
            states = model.step(states, innov)
        self._pool = model.stationary_states(
            (pool_size,), stream.split("pool"), burn_in=burn_in
        )

    # -- plain and truncated ------------------------------------------------

    def plain(self, lags, origin: int = 0):
        lags = _check_lags(lags, self.length - origin)
        pairs = [ensemble_cov(self.x[:, origin], self.x[:, origin + i]) for i in lags]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    def truncated(self, k: int, scheme: BlockScheme, mu_k: float, lags, origin: int = 0):
        lags = _check_lags(lags, self.length - origin)
        y = clip_center(self.x, k, scheme, mu_k)
        pairs = [ensemble_cov(y[:, origin], y[:, origin + i]) for i in lags]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    # -- m-dependent ---------------------------------------------------------

    def conditional_means(self, positions, window: int, level: float, mu: float,
                          rinner: int = 8):
        """E(phi(X_j) | eps_j, ..., eps_{j-window}) - mu at each position j.

        Fresh stationary states are drawn from the pre-built pool, pushed
        through the frozen innovation window, and observed with the final
        frozen innovation; ``rinner`` independent pasts are averaged.
        """
        if rinner < 1:
            raise InvalidInputError("need at least one inner resample")
        positions = [int(j) for j in positions]
        if min(positions) < window:
            raise InvalidInputError("conditioning window extends before time zero")
        rng = self.stream.split("inner").generator()
        out = np.empty((self.replicates, len(positions)))
        for c, j in enumerate(positions):
            idx = rng.integers(0, self._pool.shape[0], size=(self.replicates, rinner))
            states = self._pool[idx]
            for t in range(j - window, j):
                states = self.model.step(states, self.innovations[:, t][:, None])
            vals = self.model.observe(states, self.innovations[:, j][:, None]) - self.center
            out[:, c] = np.clip(vals, -level, level).mean(axis=1) - mu
        return out

    def mdependent(self, k: int, scheme: BlockScheme, mu_k: float, lags,
                   rinner: int = 8, origin=None):
        """gamma_tilde_{k,i} = cov(Xtilde at o, Xtilde at o+i) for any origin
        o >= m_k (stationarity; o defaults to m_k); exactly 0 is declared for
        lags beyond m_k (m-dependence)."""
        if rinner < 8:
            raise InvalidInputError("need at least 8 inner resamples")
        m = scheme.lag(k)
        if origin is None:
            origin = m
        if origin < m:
            raise InvalidInputError("origin must leave room for the conditioning window")
        lags = _check_lags(lags, self.length - origin)
        level = scheme.clip_level(k)
        active = [i for i in lags if i <= m]
        positions = [origin + i for i in active]
        gamma = np.zeros(len(lags))
        err = np.zeros(len(lags))
        if positions:
            xt = self.conditional_means(positions, m, level, mu_k, rinner)
            for c, i in enumerate(active):
                g, e = ensemble_cov(xt[:, 0], xt[:, c])
                pos = list(lags).index(i)
                gamma[pos] = g
                err[pos] = e
        return gamma, err

    def covariance_set(self, lags, scheme=None, ks=(), clip_means=None,
                       rinner: int = 8, origin=None) -> CovarianceSet:
        """All three covariance variants evaluated at one shared time origin
        (default: the largest m_k in play), so that the tilde-minus-plain
        corrections in the block-variance series cancel noise path-wise."""
        if origin is None:
            origin = max((scheme.lag(k) for k in ks), default=0)
        gamma, stderr = self.plain(lags, origin)
        out = CovarianceSet(
            lags=np.asarray(sorted(int(i) for i in lags)),
            gamma=gamma,
            stderr=stderr,
            replicates=self.replicates,
        )
        for k in ks:
            mu = 0.0 if clip_means is None else clip_means[k]
            out.gamma_trunc[k], _ = self.truncated(k, scheme, mu, lags, origin)
            out.gamma_tilde[k], out.tilde_stderr[k] = self.mdependent(
                k, scheme, mu, lags, rinner, origin
            )
        return out


def _check_lags(lags, length):
    lags = sorted(int(i) for i in lags)
    if not lags or lags[0] < 0:
        raise InvalidInputError("lags must be nonnegative")
    if lags[-1] >= length:
        raise InvalidInputError(f"lag {lags[-1]} exceeds ensemble length {length}")
    return lags


def estimate_autocov(model, lags, length, replicates, stream, burn_in=None):
    """Plain ensemble autocovariances on a lag grid (CovarianceSet without the
    truncated/tilde parts)."""
    est = CovarianceEstimator(model, length, replicates, stream, burn_in=burn_in)
    return est.covariance_set(lags)


def truncated_autocov(model, k, scheme, lags, length, replicates, stream,
                      burn_in=None, mu_k=None):
    """Clipped-and-centered ensemble autocovariances for block k."""
    est = CovarianceEstimator(model, length, replicates, stream, burn_in=burn_in)
    if mu_k is None:
        mu_k = clip_mean(model, scheme.clip_level(k), stream.split("clipmean"))
    gamma, err = est.truncated(k, scheme, mu_k, lags)
    return gamma, err


def mdependent_autocov(model, k, scheme, lags, length, replicates, stream,
                       rinner=8, burn_in=None, mu_k=None):
    """m_k-dependent ensemble autocovariances for block k."""
    est = CovarianceEstimator(model, length, replicates, stream, burn_in=burn_in)
    if mu_k is None:
        mu_k = clip_mean(model, scheme.clip_level(k), stream.split("clipmean"))
    return est.mdependent(k, scheme, mu_k, lags, rinner)


# ---------------------------------------------------------------------------
# quantile-function covariance bounds


def _exp_tail_integral(a: float, p: float) -> float:
    """integral over [a, inf) of x^p e^(1-x) dx by adaptive quadrature."""
    if a == math.inf:
        return 0.0
    val, err = integrate.quad(lambda x: x**p * math.exp(1.0 - x), a, np.inf)
    if not math.isfinite(val):
        raise NumericalError("variance", "covariance_tail_bounds", "quadrature diverged")
    return val


def quantile_envelope(u, b: float, gamma2: float):
    """Q(u) = b (1 - log u)^(1/gamma2), the quantile envelope implied by the
    semi-exponential tail bound."""
    u = np.asarray(u, dtype=float)
    if math.isinf(gamma2):
        return np.full_like(u, b)
    return b * (1.0 - np.log(u)) ** (1.0 / gamma2)


def quantile_partial_integral(v: float, b: float, gamma2: float, power: int = 1):
    """integral over (0, v] of Q(u)^power du.

    Substituting x = 1 - log u turns it into b^power e int_{1-log v} x^(p/g2)
    e^{-x} dx, a smooth integrand handled by adaptive quadrature.
    """
    if v <= 0.0:
        return 0.0
    v = min(float(v), 1.0)
    if math.isinf(gamma2):
        return b**power * v
    return b**power * _exp_tail_integral(1.0 - math.log(v), power / gamma2)


def covariance_tail_bounds(tail: TailFit, delta):
    """Per-lag bound on |cov(X_0, X_i)| from the quantile-envelope inequality:
    2 * integral over (0, H(delta(i))] of Q^2, with H(v) the partial integral
    of Q.  ``delta`` may be a DecayFit, a callable i -> delta(i), or an array.

    Returns a callable i -> bound usable to certify tail truncation.
    """
    b, g2 = tail.b, tail.gamma2

    if isinstance(delta, DecayFit):
        delta_fn = lambda i: float(delta.envelope(i))
    elif callable(delta):
        delta_fn = delta
    else:
        arr = np.asarray(delta, dtype=float)
        delta_fn = lambda i: float(arr[i]) if i < arr.size else 0.0

    def bound(i: int) -> float:
        d = max(0.0, min(1.0, delta_fn(i)))
        if d == 0.0:
            return 0.0
        h = quantile_partial_integral(d, b, g2, power=1)
        return 2.0 * quantile_partial_integral(h, b, g2, power=2)

    return bound


# ---------------------------------------------------------------------------
# the per-block variance series and the long-run variance


def block_variance(k: int, sigma2: float, cov: CovarianceSet, scheme: BlockScheme,
                   tail_bound=None, tail_fraction: float = 1e-3) -> float:
    """nu_k = sigma^2 + [correction over |i| <= m_k] - 2 sum_{i > m_k} gamma_i.

    The symmetric fold uses weight 1 at i = 0 and 2 for i >= 1 (so with exact
    inputs nu_k is precisely the long-run variance of the m_k-dependent
    process).  The tail sum runs over the lags present in ``cov``; the
    remainder beyond them must be certified negligible (< tail_fraction *
    sigma^2) by ``tail_bound``, else a TailTruncationError carries the bound.
    """
    m = scheme.lag(k)
    lags = list(cov.lags)
    if 0 not in lags:
        raise InvalidInputError("covariance set must include lag 0")
    gamma = {int(i): g for i, g in zip(cov.lags, cov.gamma)}
    tilde = {int(i): g for i, g in zip(cov.lags, cov.gamma_tilde[k])}
    head = tilde[0] - gamma[0]
    for i in range(1, m + 1):
        if i not in gamma:
            raise InvalidInputError(f"covariance set is missing lag {i} <= m_k")
        head += 2.0 * (tilde.get(i, 0.0) - gamma[i])
    horizon = max(lags)
    tail = 2.0 * sum(gamma[i] for i in gamma if m + 1 <= i <= horizon)

    remainder = _certified_remainder(tail_bound, horizon + 1, sigma2)
    if remainder > tail_fraction * max(abs(sigma2), 1e-12):
        raise TailTruncationError(
            f"tail beyond lag {horizon} not negligible for nu_{k}", remainder
        )
    return float(sigma2 + head - tail)


def _certified_remainder(tail_bound, start: int, sigma2: float) -> float:
    if tail_bound is None:
        raise TailTruncationError(
            "no tail certificate supplied for the covariance tail sum", math.inf
        )
    total = 0.0
    floor = 1e-18 * max(abs(sigma2), 1.0)
    i = start
    while i < start + 100_000:
        v = 2.0 * float(tail_bound(i))
        total += v
        if v < floor:
            return total
        i += 1
    raise TailTruncationError("covariance tail bound did not converge", total)


def long_run_variance(model, n_grid, replicates, stream, burn_in=None,
                      block_size=util.DEFAULT_BLOCK, threads=1,
                      cross_check_lags=None) -> VarianceEstimate:
    """sigma^2 from the scaled-partial-sum route: ensemble Var(S_n)/n on a grid,
    extrapolated by fitting Var(S_n)/n = sigma^2 + beta/n.

    A covariance-sum cross-check (gamma_0 + 2 sum gamma_i) is attached when
    ``cross_check_lags`` is given.
    """
    n_grid = np.asarray(sorted(set(int(n) for n in n_grid)))
    if n_grid.size < 2 or n_grid[0] < 1:
        raise InvalidInputError("need an increasing grid of lengths >= 1")
    n_max = int(n_grid[-1])
    grid_pos = {int(n): i for i, n in enumerate(n_grid)}

    def run_block(block):
        b, count = block
        states = model.stationary_states(
            (count,), stream.split("var", b, "start"), burn_in=burn_in
        )
        rng = stream.split("var", b, "innov").generator()
        s = np.zeros(count)
        sums = np.zeros((n_grid.size, 3))  # S, S^2, count columns
        for n in range(1, n_max + 1):
            innov = model.draw_innovations(rng, (count,))
            s += model.observe(states, innov)
            states = model.step(states, innov)
            i = grid_pos.get(n)
            if i is not None:
                sums[i, 0] += s.sum()
                sums[i, 1] += (s * s).sum()
                sums[i, 2] += (s**4).sum()
        return sums

    blocks = util.replicate_blocks(replicates, block_size)
    partials = util.ordered_map(run_block, blocks, threads)
    total = np.zeros((n_grid.size, 3))
    for p in partials:
        total += p
    mean_s = total[:, 0] / replicates
    es2 = total[:, 1] / replicates
    var_s = np.maximum(es2 - mean_s**2, 0.0)
    m4 = total[:, 2] / replicates
    # stderr of Var(S_n)/n via Var(S^2) ~ E S^4 - (E S^2)^2 (mean of S is 0)
    var_of_var = np.maximum(m4 - es2**2, 0.0) / replicates
    var_over_n = var_s / n_grid
    stderr = np.sqrt(var_of_var) / n_grid

    slope, intercept, _ = util.least_squares_line(1.0 / n_grid.astype(float), var_over_n)
    sigma2 = float(intercept)
    est = VarianceEstimate(
        sigma2=sigma2,
        method="scaled-partial-sum",
        n_grid=n_grid,
        var_over_n=var_over_n,
        stderr=stderr,
        noise_dominated=sigma2 < 0,
    )
    if cross_check_lags is not None:
        cov = estimate_autocov(
            model,
            cross_check_lags,
            max(cross_check_lags) + 1,
            replicates,
            stream.split("xcheck"),
            burn_in=burn_in,
        )
        est.cross_check = float(cov.gamma[0] + 2.0 * cov.gamma[1:].sum())
    return est
