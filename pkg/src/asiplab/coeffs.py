"""Coupling coefficients, tail profiles, and decay indices.

The central object is delta(n) = E |X_n - X_n*|, where the starred chain runs
from an independent stationary start but consumes the *same* innovations.
Estimates are Monte Carlo means over replicates; fitted decay and tail
profiles are one-sided envelopes (the conditions they feed are one-sided
bounds, so fits dominate the data rather than pass through it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import util
from .errors import InsufficientSignalError, InsufficientTailError, InvalidInputError
from .linalg import pairwise_log_distance
from .models import MatrixModel, Model
from .streams import InnovationStream


@dataclass
class DeltaEstimate:
    n_grid: np.ndarray
    delta_hat: np.ndarray
    stderr: np.ndarray
    replicates: int
    burn_in: int
    delta_hat_2x: np.ndarray | None = None  # sensitivity rerun at doubled burn-in

    def rows(self):
        return [
            (int(n), float(d), float(s), self.replicates)
            for n, d, s in zip(self.n_grid, self.delta_hat, self.stderr)
        ]


@dataclass
class DecayFit:
    c: float
    gamma1: float
    r_squared: float
    used_lags: np.ndarray

    def envelope(self, n):
        return np.exp(-self.c * np.asarray(n, dtype=float) ** self.gamma1)


@dataclass
class TailFit:
    b: float
    gamma2: float
    grid_violations: int
    thresholds: np.ndarray
    levels: np.ndarray

    def envelope(self, t):
        t = np.asarray(t, dtype=float)
        if math.isinf(self.gamma2):
            return np.where(t <= self.b, 1.0, 0.0) * np.e
        return np.exp(1.0 - (t / self.b) ** self.gamma2)


@dataclass
class PairDeltaEstimate:
    k_grid: np.ndarray
    sup_hat: np.ndarray  # max over probe pairs of mean |X_{k,x} - X_{k,y}|
    per_pair: np.ndarray  # (pairs, k)
    stderr: np.ndarray  # stderr of the maximizing pair per k
    replicates: int


@dataclass
class ContractionProbe:
    k_grid: np.ndarray
    exceed_prob: np.ndarray  # max over pairs and j in [k, 2k]
    rate: float
    replicates: int


def _accumulate_blocks(stream, replicates, block_size, threads, run_block, width):
    """Run per-block kernels and combine Σx / Σx² partials in block order."""
    blocks = util.replicate_blocks(replicates, block_size)
    partials = util.ordered_map(run_block, blocks, threads)
    sums = np.zeros(width)
    sumsqs = np.zeros(width)
    for s, q in partials:
        sums += s
        sumsqs += q
    return util.combine_mean_stderr(sums, sumsqs, replicates)


def estimate_delta(
    model: Model,
    n_grid,
    replicates: int,
    stream: InnovationStream,
    burn_in=None,
    threads: int = 1,
    block_size: int = util.DEFAULT_BLOCK,
    sensitivity: bool = False,
    swap_starts: bool = False,
):
    """Monte Carlo estimate of delta(n) on a grid.

    Per replicate, two starts are drawn from independent burn-in runs (disjoint
    stream labels) and both chains are then driven by one shared innovation
    stream, mirroring the definition of the starred chain.  n = 0 entries (when
    present in the grid) estimate E |X_1| instead.

    ``swap_starts`` exchanges the two start streams; |X_n - X_n*| is symmetric,
    so the estimate must be unchanged (exposed for exactly that diagnostic).

    ``sensitivity`` reruns the estimate with doubled burn-in and the same
    shared innovations, reporting it in ``delta_hat_2x``: the coefficient
    definition assumes exact stationary starts, and this column is how the
    burn-in bias is monitored.
    """
    if replicates < 2:
        raise InvalidInputError("need at least 2 replicates")
    n_grid = np.asarray(sorted(set(int(n) for n in n_grid)))
    if n_grid.size == 0 or n_grid[0] < 0:
        raise InvalidInputError("delta grid entries must be nonnegative")
    if burn_in is None:
        burn_in = model.suggested_burn_in()
    n_max = int(n_grid[-1])

    def runner(bi, tag):
        def run_block(block):
            b, count = block
            labels = ("w0", "w0star") if not swap_starts else ("w0star", "w0")
            wa = model.stationary_states(
                (count,), stream.split("delta", tag, b, labels[0]), burn_in=bi
            )
            wb = model.stationary_states(
                (count,), stream.split("delta", tag, b, labels[1]), burn_in=bi
            )
            rng = stream.split("delta", "innov", b).generator()
            sums = np.zeros(n_grid.size)
            sumsqs = np.zeros(n_grid.size)
            grid_pos = {int(n): i for i, n in enumerate(n_grid)}
            for n in range(1, n_max + 1):
                innov = model.draw_innovations(rng, (count,))
                xa = model.observe(wa, innov)
                xb = model.observe(wb, innov)
                if n == 1 and 0 in grid_pos:
                    a = np.abs(xa)
                    sums[grid_pos[0]] += a.sum()
                    sumsqs[grid_pos[0]] += (a * a).sum()
                i = grid_pos.get(n)
                if i is not None:
                    d = np.abs(xa - xb)
                    sums[i] += d.sum()
                    sumsqs[i] += (d * d).sum()
                wa = model.step(wa, innov)
                wb = model.step(wb, innov)
            return sums, sumsqs

        return _accumulate_blocks(
            stream, replicates, block_size, threads, run_block, n_grid.size
        )

    delta_hat, stderr = runner(burn_in, "base")
    delta_2x = None
    if sensitivity:
        delta_2x, _ = runner(2 * burn_in, "2x")
    return DeltaEstimate(
        n_grid=n_grid,
        delta_hat=delta_hat,
        stderr=stderr,
        replicates=replicates,
        burn_in=burn_in,
        delta_hat_2x=delta_2x,
    )


def estimate_delta_pairs(
    model: MatrixModel,
    k_grid,
    probe_pairs,
    replicates: int,
    stream: InnovationStream,
    threads: int = 1,
    block_size: int = util.DEFAULT_BLOCK,
):
    """Per-k estimate of sup over start pairs of E |X_{k,x} - X_{k,y}|.

    Both chains see the same matrices by construction (they share A_{k-1}), so
    this is the common-random-number coupling with deterministic starts; the
    supremum over projective space is replaced by a max over the probe pairs
    and is therefore a lower bound on it.
    """
    if not isinstance(model, MatrixModel):
        raise InvalidInputError("pair coupling needs a matrix model")
    if not probe_pairs:
        raise InvalidInputError("need at least one probe pair")
    k_grid = np.asarray(sorted(set(int(k) for k in k_grid)))
    if k_grid[0] < 1:
        raise InvalidInputError("k grid entries must be >= 1")
    k_max = int(k_grid[-1])
    pairs = len(probe_pairs)
    xs = np.stack([np.asarray(p[0], dtype=float) for p in probe_pairs])
    ys = np.stack([np.asarray(p[1], dtype=float) for p in probe_pairs])
    xs = xs / np.linalg.norm(xs, axis=1, keepdims=True)
    ys = ys / np.linalg.norm(ys, axis=1, keepdims=True)
    width = pairs * k_grid.size

    def run_block(block):
        b, count = block
        rng = stream.split("pairs", b).generator()
        wa = np.broadcast_to(xs, (count, pairs, model.dim)).copy()
        wb = np.broadcast_to(ys, (count, pairs, model.dim)).copy()
        sums = np.zeros((pairs, k_grid.size))
        sumsqs = np.zeros((pairs, k_grid.size))
        grid_pos = {int(k): i for i, k in enumerate(k_grid)}
        for k in range(1, k_max + 1):
            innov = model.draw_innovations(rng, (count,))[:, None]
            i = grid_pos.get(k)
            if i is not None:
                d = np.abs(model.observe(wa, innov) - model.observe(wb, innov))
                sums[:, i] += d.sum(axis=0)
                sumsqs[:, i] += (d * d).sum(axis=0)
            wa = model.step(wa, innov)
            wb = model.step(wb, innov)
        return sums.ravel(), sumsqs.ravel()

    mean, stderr = _accumulate_blocks(
        stream, replicates, block_size, threads, run_block, width
    )
    per_pair = mean.reshape(pairs, k_grid.size)
    per_pair_err = stderr.reshape(pairs, k_grid.size)
    best = per_pair.argmax(axis=0)
    return PairDeltaEstimate(
        k_grid=k_grid,
        sup_hat=per_pair.max(axis=0),
        per_pair=per_pair,
        stderr=per_pair_err[best, np.arange(k_grid.size)],
        replicates=replicates,
    )


def contraction_probe(
    model: MatrixModel,
    k_grid,
    rate: float,
    probe_pairs,
    replicates: int,
    stream: InnovationStream,
    threads: int = 1,
    block_size: int = util.DEFAULT_BLOCK,
):
    """Empirical P(log d(A_{j-1} x, A_{j-1} y) >= -rate * k), maximized over
    probe pairs and j in [k, 2k].

    log d(x, x) is -inf by convention, so identical points never trigger the
    event; the probability is nondecreasing in ``rate`` for fixed k.
    """
    if rate <= 0:
        raise InvalidInputError("rate must be positive")
    if not isinstance(model, MatrixModel):
        raise InvalidInputError("contraction probe needs a matrix model")
    k_grid = np.asarray(sorted(set(int(k) for k in k_grid)))
    if k_grid[0] < 1:
        raise InvalidInputError("k grid entries must be >= 1")
    steps = 2 * int(k_grid[-1]) - 1
    pairs = len(probe_pairs)
    xs = np.stack([np.asarray(p[0], dtype=float) for p in probe_pairs])
    ys = np.stack([np.asarray(p[1], dtype=float) for p in probe_pairs])
    # events indexed by (pair, k, j) with j in [k, 2k]
    cells = [(i, int(k), j) for i in range(pairs) for k in k_grid for j in range(k, 2 * k + 1)]
    width = len(cells)

    def run_block(block):
        b, count = block
        rng = stream.split("contract", b).generator()
        wa = np.broadcast_to(xs, (count, pairs, model.dim)).copy()
        wb = np.broadcast_to(ys, (count, pairs, model.dim)).copy()
        logd = np.empty((steps + 1, count, pairs))
        logd[0] = pairwise_log_distance(wa, wb)
        for t in range(1, steps + 1):
            innov = model.draw_innovations(rng, (count,))[:, None]
            wa = model.step(wa, innov)
            wb = model.step(wb, innov)
            logd[t] = pairwise_log_distance(wa, wb)
        sums = np.zeros(width)
        for c, (i, k, j) in enumerate(cells):
            sums[c] = np.count_nonzero(logd[j - 1, :, i] >= -rate * k)
        return sums

    blocks = util.replicate_blocks(replicates, block_size)
    partials = util.ordered_map(run_block, blocks, threads)
    counts = np.zeros(width)
    for s in partials:
        counts += s
    probs = counts / replicates
    out = np.zeros(k_grid.size)
    for c, (i, k, j) in enumerate(cells):
        ki = int(np.searchsorted(k_grid, k))
        out[ki] = max(out[ki], probs[c])
    return ContractionProbe(
        k_grid=k_grid, exceed_prob=out, rate=rate, replicates=replicates
    )


def fit_decay(estimate: DeltaEstimate, fit_lags=None) -> DecayFit:
    """Upper-envelope fit of delta(n) <= exp(-c n^gamma1).

    Least squares of log(-log delta_hat) on log n over the usable grid points
    (n >= 1, above the 3-stderr noise floor), then c shrunk until the envelope
    dominates every usable point.
    """
    n = estimate.n_grid.astype(float)
    d = estimate.delta_hat
    s = estimate.stderr
    usable = (n >= 1) & (d > 3.0 * s) & (d > 0.0) & (d < 1.0)
    if fit_lags is not None:
        usable &= np.isin(estimate.n_grid, np.asarray(list(fit_lags)))
    strong = usable & (d > 10.0 * s)
    if strong.sum() < 4:
        raise InsufficientSignalError(
            f"only {int(strong.sum())} grid points clear 10x the noise floor"
        )
    if np.any(d[usable] <= 0):
        raise InsufficientSignalError("nonpositive delta estimate on the fit grid")
    x = np.log(n[usable])
    y = np.log(-np.log(d[usable]))
    slope, intercept, r2 = util.least_squares_line(x, y)
    if slope <= 0:
        raise InsufficientSignalError("fitted decay index is nonpositive")
    c = min(math.exp(intercept), float(np.min(-np.log(d[usable]) / n[usable] ** slope)))
    return DecayFit(c=c, gamma1=slope, r_squared=r2, used_lags=estimate.n_grid[usable])


def fit_tail(samples, levels=None) -> TailFit:
    """Envelope fit of P(|X_1| > t) <= exp(1 - (t/b)^gamma2).

    gamma2 comes from a least-squares fit of log(-log survival) on log t over
    deep-tail quantile levels; b is then the smallest scale making the bound
    hold at every grid threshold, so the fit reports zero grid violations by
    construction.  Bounded samples (the top of the sample concentrates at the
    maximum) give gamma2 = inf with b the observed maximum.
    """
    a = np.abs(np.asarray(samples, dtype=float).ravel())
    n = a.size
    if n < 10_000:
        raise InsufficientTailError(f"need at least 10^4 samples, got {n}")
    top = float(a.max())
    if top <= 0:
        raise InsufficientTailError("all samples are zero")
    if top - float(np.quantile(a, 0.999)) <= 1e-12 * max(1.0, top):
        return TailFit(
            b=top,
            gamma2=math.inf,
            grid_violations=0,
            thresholds=np.array([top]),
            levels=np.array([0.0]),
        )
    if levels is None:
        levels = np.geomspace(0.01, max(5e-5, 20.0 / n), 10)
    levels = np.asarray(levels, dtype=float)
    thresholds = np.quantile(a, 1.0 - levels)
    surv = np.array([(a > t).mean() for t in thresholds])
    ok = (thresholds > 0) & (surv > 0) & (surv < 1) & (np.log(surv) < 0)
    thresholds, surv = thresholds[ok], surv[ok]
    keep = np.concatenate(([True], np.diff(thresholds) > 0))
    thresholds, surv = thresholds[keep], surv[keep]
    if thresholds.size < 4:
        raise InsufficientTailError("too few distinct tail thresholds")
    gamma2, _, _ = util.least_squares_line(np.log(thresholds), np.log(-np.log(surv)))
    if gamma2 <= 0:
        raise InsufficientTailError("tail fit produced a nonpositive index")
    b = float(np.max(thresholds * (1.0 - np.log(surv)) ** (-1.0 / gamma2)))
    violations = int(np.sum(surv > np.exp(1.0 - (thresholds / b) ** gamma2) * (1 + 1e-12)))
    return TailFit(
        b=b,
        gamma2=float(gamma2),
        grid_violations=violations,
        thresholds=thresholds,
        levels=levels,
    )
