"""Empirical large-deviation, regularity, and alignment checks for matrix
models.

All exceedance probabilities carry Wilson 95% intervals, and suprema over
projective space are replaced by maxima over probe starts (so every reported
statistic is a lower bound on the corresponding supremum).  Zero-count cells
are never reported as exact zeros: the Wilson upper bound plays the
rule-of-three role.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import util
from .errors import CapabilityError, InvalidInputError
from . import linalg
from .linalg import POSITIVE
from .models import MatrixModel, lyapunov_estimate
from .streams import InnovationStream

_Z95 = 1.959963984540054


def wilson_interval(count: int, total: int):
    """95% Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise InvalidInputError("need a positive trial count")
    p = count / total
    z2 = _Z95 * _Z95
    denom = 1.0 + z2 / total
    center = (p + z2 / (2 * total)) / denom
    half = (_Z95 / denom) * math.sqrt(p * (1 - p) / total + z2 / (4 * total * total))
    return max(0.0, center - half), min(1.0, center + half)


def default_probe_starts(model: MatrixModel, stream: InnovationStream,
                         random_batch: int = 16) -> np.ndarray:
    """Canonical basis directions, a Haar-random batch, and a near-orthogonal
    pair; nonnegative variants in the positive regime."""
    d = model.dim
    rng = stream.generator()
    probes = [np.eye(d)[i] for i in range(d)]
    if model.kind == POSITIVE:
        probes.extend(rng.dirichlet(np.ones(d), size=random_batch))
        probes.append(np.full(d, 1.0 / d))
    else:
        batch = rng.standard_normal((random_batch, d))
        probes.extend(batch / np.linalg.norm(batch, axis=1, keepdims=True))
        near = np.eye(d)[0] + 1e-4 * np.eye(d)[-1]
        probes.append(near / np.linalg.norm(near))
    return np.stack([np.asarray(p, dtype=float) for p in probes])


@dataclass
class DeviationReport:
    observable: str
    n_grid: np.ndarray
    epsilon: float
    exceed_prob: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    slope: float  # of log P-hat against n^gamma (over positive cells)
    kendall_tau: float
    lambda_hat: float
    replicates: int
    zero_count_ns: list = field(default_factory=list)

    def rows(self, probe_label: str = "max"):
        return [
            (int(n), self.epsilon, probe_label, float(p), float(lo), float(hi))
            for n, p, lo, hi in zip(self.n_grid, self.exceed_prob, self.ci_low, self.ci_high)
        ]


class _ProductCarry:
    """Renormalized running product for a batch of paths."""

    def __init__(self, replicates: int, dim: int):
        self.b = np.broadcast_to(np.eye(dim), (replicates, dim, dim)).copy()
        self.log_scale = np.zeros(replicates)

    def update(self, mats: np.ndarray):
        self.b = mats @ self.b
        scale = np.linalg.norm(self.b, axis=(-2, -1))
        self.b /= scale[:, None, None]
        self.log_scale += np.log(scale)

    def svals(self):
        return np.linalg.svd(self.b, compute_uv=False)

    def log_opnorm(self, svals=None):
        s = self.svals() if svals is None else svals
        return self.log_scale + np.log(s[..., 0])

    def log_wedge(self, svals=None):
        s = self.svals() if svals is None else svals
        return 2.0 * self.log_scale + np.log(s[..., 0] * s[..., 1])

    def log_rho(self):
        return self.log_scale + np.log(np.abs(np.linalg.eigvals(self.b)).max(axis=-1))

    def log_coeff(self, x: np.ndarray, y: np.ndarray):
        inner = np.abs(np.einsum("rij,j,i->r", self.b, x, y))
        with np.errstate(divide="ignore"):
            return self.log_scale + np.log(inner)

    def apply_to(self, x: np.ndarray):
        """log ||A_n x|| and the moved unit directions for a stack of starts."""
        moved = np.einsum("rij,pj->rpi", self.b, x)
        norms = np.linalg.norm(moved, axis=-1)
        return self.log_scale[:, None] + np.log(norms), moved / norms[..., None]


def _require_matrix(model):
    if not isinstance(model, MatrixModel):
        raise CapabilityError("deviation checks need a matrix model")


def _lambda(model, stream, lambda_hat, observable):
    if lambda_hat is not None:
        return float(lambda_hat)
    est, _ = lyapunov_estimate(
        model, 20_000, stream.split("lyap"), replicates=8, observable=observable
    )
    return est


def _finish_report(observable, n_grid, epsilon, counts, replicates, gamma, lam):
    """counts: (probes, len(n_grid)) exceedance counts; the reported cell is
    the max over probes."""
    best = counts.max(axis=0)
    probs = best / replicates
    ci = np.array([wilson_interval(int(c), replicates) for c in best])
    pos = probs > 0
    if pos.sum() >= 2:
        slope, _, _ = util.least_squares_line(
            n_grid[pos].astype(float) ** gamma, np.log(probs[pos])
        )
    else:
        slope = math.nan
    tau = stats.kendalltau(n_grid, probs).statistic
    return DeviationReport(
        observable=observable,
        n_grid=n_grid,
        epsilon=epsilon,
        exceed_prob=probs,
        ci_low=ci[:, 0],
        ci_high=ci[:, 1],
        slope=float(slope),
        kendall_tau=float(tau) if not math.isnan(float(tau)) else 0.0,
        lambda_hat=lam,
        replicates=replicates,
        zero_count_ns=[int(n) for n, c in zip(n_grid, best) if c == 0],
    )


def _grid(n_grid):
    g = np.asarray(sorted(set(int(n) for n in n_grid)))
    if g.size == 0 or g[0] < 1:
        raise InvalidInputError("grid entries must be >= 1")
    return g


def cocycle_deviation(model: MatrixModel, probe_starts, n_grid, epsilon: float,
                      replicates: int, stream: InnovationStream, gamma: float = 1.0,
                      lambda_hat=None) -> DeviationReport:
    """P(max_{k<=n} |log ||A_k x|| - k lambda| > eps n), maximized over probe
    starts, with a trend fit of log P-hat against n^gamma."""
    _require_matrix(model)
    n_grid = _grid(n_grid)
    lam = _lambda(model, stream, lambda_hat, "log_norm")
    probes = np.asarray(probe_starts, dtype=float)
    probes = probes / np.linalg.norm(probes, axis=1, keepdims=True)
    n_max = int(n_grid[-1])
    rng = stream.split("paths").generator()
    w = np.broadcast_to(probes, (replicates, *probes.shape)).copy()
    lognorm = np.zeros((replicates, probes.shape[0]))
    running = np.zeros_like(lognorm)
    counts = np.zeros((probes.shape[0], n_grid.size))
    pos = {int(n): i for i, n in enumerate(n_grid)}
    for k in range(1, n_max + 1):
        mats = model.draw_innovations(rng, (replicates,))[:, None]
        lognorm += model.observe(w, mats)
        w = model.step(w, mats)
        np.maximum(running, np.abs(lognorm - k * lam), out=running)
        i = pos.get(k)
        if i is not None:
            counts[:, i] = (running > epsilon * k).sum(axis=0)
    return _finish_report("cocycle", n_grid, epsilon, counts, replicates, gamma, lam)


def norm_deviation(model: MatrixModel, n_grid, epsilon: float, replicates: int,
                   stream: InnovationStream, gamma: float = 1.0,
                   lambda_hat=None) -> DeviationReport:
    """Running-max deviation of log ||A_k|| around k lambda (all basis starts
    are implicitly covered: the operator norm dominates every column norm)."""
    _require_matrix(model)
    n_grid = _grid(n_grid)
    lam = _lambda(model, stream, lambda_hat, "log_norm")
    n_max = int(n_grid[-1])
    rng = stream.split("paths").generator()
    carry = _ProductCarry(replicates, model.dim)
    running = np.zeros(replicates)
    counts = np.zeros((1, n_grid.size))
    pos = {int(n): i for i, n in enumerate(n_grid)}
    for k in range(1, n_max + 1):
        carry.update(model.draw_innovations(rng, (replicates,)))
        np.maximum(running, np.abs(carry.log_opnorm() - k * lam), out=running)
        i = pos.get(k)
        if i is not None:
            counts[0, i] = (running > epsilon * k).sum()
    return _finish_report("norm", n_grid, epsilon, counts, replicates, gamma, lam)


def wedge_deviation(model: MatrixModel, n_grid, epsilon: float, replicates: int,
                    stream: InnovationStream, gamma: float = 1.0,
                    drift_hat=None) -> DeviationReport:
    """Running-max deviation of the exterior-square norm around k (lambda1 +
    lambda2).  The product is tracked through its second compound matrix (the
    top singular value of the compound *is* the wedge norm and never hits the
    SVD roundoff floor), and the two-exponent sum is estimated directly from
    frame volume growth, never by subtracting separate estimates."""
    _require_matrix(model)
    n_grid = _grid(n_grid)
    lam = _lambda(model, stream, drift_hat, "log_wedge")
    n_max = int(n_grid[-1])
    rng = stream.split("paths").generator()
    kdim = len(linalg.index_pairs(model.dim))
    carry = _ProductCarry(replicates, kdim)
    running = np.zeros(replicates)
    counts = np.zeros((1, n_grid.size))
    pos = {int(n): i for i, n in enumerate(n_grid)}
    for k in range(1, n_max + 1):
        carry.update(linalg.compound2(model.draw_innovations(rng, (replicates,))))
        np.maximum(running, np.abs(carry.log_opnorm() - k * lam), out=running)
        i = pos.get(k)
        if i is not None:
            counts[0, i] = (running > epsilon * k).sum()
    return _finish_report("wedge", n_grid, epsilon, counts, replicates, gamma, lam)


# ---------------------------------------------------------------------------
# regularity of the stationary law


@dataclass
class RegularityReport:
    gamma: float
    eta_grid: np.ndarray
    n_values: np.ndarray
    statistic: np.ndarray  # (eta, n): max over probes of E exp(eta |log align|^gamma)
    stability_ratio: np.ndarray  # per eta: stat at n_max / stat at n_min
    divergent_etas: list
    replicates: int

    def rows(self):
        out = []
        for i, eta in enumerate(self.eta_grid):
            for j, n in enumerate(self.n_values):
                out.append((float(eta), self.gamma, "max", float(self.statistic[i, j]), int(n)))
        return out


def regularity_check(model: MatrixModel, probe_starts, eta_grid, gamma: float,
                     n_values, replicates: int, stream: InnovationStream,
                     burn_in=None) -> RegularityReport:
    """Empirical E exp(eta |log align(x, W_n)|^gamma) across probes, checked
    for stability in n (a bounded statistic should not grow with n)."""
    _require_matrix(model)
    eta_grid = np.asarray(sorted(float(e) for e in eta_grid))
    if np.any(eta_grid <= 0):
        raise InvalidInputError("eta values must be positive")
    n_values = np.asarray(sorted(set(int(n) for n in n_values)))
    probes = np.asarray(probe_starts, dtype=float)
    probes = probes / np.linalg.norm(probes, axis=1, keepdims=True)
    w = model.stationary_states((replicates,), stream.split("start"), burn_in=burn_in)
    rng = stream.split("innov").generator()
    stat = np.zeros((eta_grid.size, n_values.size))
    pos = {int(n): j for j, n in enumerate(n_values)}
    for k in range(1, int(n_values[-1]) + 1):
        w = model.step(w, model.draw_innovations(rng, (replicates,)))
        j = pos.get(k)
        if j is None:
            continue
        u = w / np.linalg.norm(w, axis=-1, keepdims=True)
        align = np.abs(u @ probes.T)  # (R, P)
        with np.errstate(divide="ignore"):
            loga = np.abs(np.log(align))
        for i, eta in enumerate(eta_grid):
            with np.errstate(over="ignore"):
                vals = np.exp(eta * loga**gamma)
            stat[i, j] = vals.mean(axis=0).max()
    ratio = stat[:, -1] / stat[:, 0]
    divergent = [float(eta_grid[i]) for i in range(eta_grid.size)
                 if not np.all(np.isfinite(stat[i]))]
    return RegularityReport(
        gamma=gamma,
        eta_grid=eta_grid,
        n_values=n_values,
        statistic=stat,
        stability_ratio=ratio,
        divergent_etas=divergent,
        replicates=replicates,
    )


# ---------------------------------------------------------------------------
# matrix-coefficient alignment


@dataclass
class AlignmentReport:
    n_grid: np.ndarray
    identity_max_error: float
    q95_log_align: np.ndarray
    envelope: np.ndarray  # 3 (log n)^(1/gamma)
    censored: int
    replicates: int


def coefficient_alignment(model: MatrixModel, x, y, n_grid, replicates: int,
                          stream: InnovationStream, gamma: float = 1.0) -> AlignmentReport:
    """Path-wise check of log |<A_n x, y>| = log ||A_n x|| + log align(A_n x, y)
    for unit y, plus the growth of |log align| against its (log n)^(1/gamma)
    envelope.  Numerically-zero coefficients are censored, not asserted."""
    _require_matrix(model)
    n_grid = _grid(n_grid)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x = x / np.linalg.norm(x)
    y = y / np.linalg.norm(y)
    rng = stream.split("paths").generator()
    carry = _ProductCarry(replicates, model.dim)
    pos = {int(n): i for i, n in enumerate(n_grid)}
    q95 = np.zeros(n_grid.size)
    worst = 0.0
    censored = 0
    for k in range(1, int(n_grid[-1]) + 1):
        carry.update(model.draw_innovations(rng, (replicates,)))
        i = pos.get(k)
        if i is None:
            continue
        log_coeff = carry.log_coeff(x, y)
        log_ax, moved = carry.apply_to(x[None, :])
        align = np.abs(np.einsum("rpi,i->rp", moved, y))[:, 0]
        finite = np.isfinite(log_coeff) & (align > 0)
        censored += int((~finite).sum())
        with np.errstate(divide="ignore"):
            resid = log_coeff[finite] - (log_ax[finite, 0] + np.log(align[finite]))
        worst = max(worst, float(np.abs(resid).max(initial=0.0)))
        q95[i] = np.quantile(np.abs(np.log(align[align > 0])), 0.95)
    return AlignmentReport(
        n_grid=n_grid,
        identity_max_error=worst,
        q95_log_align=q95,
        envelope=3.0 * np.log(n_grid.astype(float)) ** (1.0 / gamma),
        censored=censored,
        replicates=replicates,
    )


# ---------------------------------------------------------------------------
# spectral-radius versus norm gap


@dataclass
class SpectralGapReport:
    n_grid: np.ndarray
    l_grid: np.ndarray
    epsilon: float
    prob: np.ndarray  # (n, l): P(log rho(A_n) - log ||A_n|| >= -eps l)
    ci_low: np.ndarray
    ci_high: np.ndarray
    failure_trend_tau: float  # Kendall tau of (l, failure prob) pooled over n
    replicates: int


def spectral_radius_gap(model: MatrixModel, n_grid, l_grid, epsilon: float,
                        replicates: int, stream: InnovationStream) -> SpectralGapReport:
    """Empirical probability that the spectral radius tracks the norm:
    log rho(A_n) - log ||A_n|| >= -eps l, per (n, l)."""
    _require_matrix(model)
    n_grid = _grid(n_grid)
    l_grid = np.asarray(sorted(set(int(l) for l in l_grid)))
    if np.any(l_grid < 1) or l_grid[-1] > n_grid[-1]:
        raise InvalidInputError("l grid must lie in [1, max n]")
    rng = stream.split("paths").generator()
    carry = _ProductCarry(replicates, model.dim)
    pos = {int(n): i for i, n in enumerate(n_grid)}
    counts = np.zeros((n_grid.size, l_grid.size))
    for k in range(1, int(n_grid[-1]) + 1):
        carry.update(model.draw_innovations(rng, (replicates,)))
        i = pos.get(k)
        if i is None:
            continue
        gap = carry.log_rho() - carry.log_opnorm()
        for j, l in enumerate(l_grid):
            counts[i, j] = (gap >= -epsilon * l).sum()
    probs = counts / replicates
    ci = np.array([
        [wilson_interval(int(c), replicates) for c in row] for row in counts
    ])
    fail = 1.0 - probs
    taus = [
        stats.kendalltau(l_grid, fail[i]).statistic
        for i in range(n_grid.size)
        if np.ptp(fail[i]) > 0
    ]
    tau = float(np.mean(taus)) if taus else 0.0
    return SpectralGapReport(
        n_grid=n_grid,
        l_grid=l_grid,
        epsilon=epsilon,
        prob=probs,
        ci_low=ci[..., 0],
        ci_high=ci[..., 1],
        failure_trend_tau=tau,
        replicates=replicates,
    )
