"""The measurable strong-approximation pipeline.

Four stages, each an explicit path transformation whose error is itself
measured:

    S   the raw partial sums,
    S+  blockwise clipped-and-centered sums (truncation at M_k, first index
        dropped by the S+_1 = 0 convention),
    S~  the m_k-dependent approximation (conditional expectations given the
        last m_k + 1 innovations, realized by window replay),
    G   a coupled Gaussian partial-sum path with iid N(0, nu) increments.

The Gaussian stage partitions each block into alternating sub-blocks and gaps.
Sums over items are mapped to Gaussians by an empirical-quantile transform
against a calibration ensemble of independent same-law sums, then spread over
the item's indices by a Gaussian-bridge fill so the output is a bona fide
partial-sum path of per-index Gaussians.  Sub-block sums separated by gaps of
length >= m_k are exactly independent; gap sums are quantile-coupled as well
by default (they are mutually independent across gaps, though not of their
neighboring sub-blocks; the trailing remainder of a block and every block
below k0 fall back to independent Gaussians).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .blocks import BlockScheme, block_index
from .errors import CapabilityError, InvalidInputError, SchemeError
from .models import Model
from .streams import InnovationStream

SUB = "sub"
GAP = "gap"
TAIL = "tail"


def subblock_length(scheme: BlockScheme, k: int, rule: str = "sqrt-over-k") -> int:
    """Length L_k of the big sub-blocks inside block k.

    "sqrt" is the plain ceil(3^(k/2)); the default "sqrt-over-k" shrinks it by
    the block number, which keeps the measured coupling discrepancy growing
    slower than n^(1/4) on desk-scale grids (the plain rule's within-sub-block
    wander picks up an extra sqrt(log) factor that does not).
    """
    base = math.ceil(3.0 ** (k / 2.0))
    if rule == "sqrt":
        return int(base)
    if rule == "sqrt-over-k":
        return max(1, int(round(base / k)))
    raise InvalidInputError(f"unknown sub-block rule {rule!r}")


def block_layout(scheme: BlockScheme, k: int, length: int, rule: str = "sqrt-over-k"):
    """Partition the ``length`` indices of (a prefix of) block k into
    alternating (kind, start, stop) items: sub-blocks of length L_k separated
    by gaps of length m_k, with any trailing remainder shorter than a full
    sub-block emitted as an uncoupled tail item."""
    l_k = subblock_length(scheme, k, rule)
    m_k = scheme.lag(k)
    if length < 1:
        raise InvalidInputError("empty block")
    if l_k > length:
        return [(TAIL, 0, length)]
    items = []
    pos = 0
    while pos + l_k <= length:
        items.append((SUB, pos, pos + l_k))
        pos += l_k
        gap = min(m_k, length - pos)
        if gap > 0:
            items.append((GAP, pos, pos + gap))
            pos += gap
    if pos < length:
        items.append((TAIL, pos, length))
    return items


# ---------------------------------------------------------------------------
# stage 1: truncation


def clip_means_for(model: Model, scheme: BlockScheme, k_max: int,
                   stream: InnovationStream, draws: int = 100_000,
                   center: float = 0.0) -> dict:
    """E phi_k(X_1) for every block k <= k_max, from one shared sample of the
    centered observable.

    Exactly zero for models declaring a symmetric observable (the clip is odd),
    which matters: Monte Carlo noise in these constants would otherwise leak a
    linear drift into the truncated path."""
    if model.observable_symmetric:
        return {k: 0.0 for k in range(1, k_max + 1)}
    from .models import observable_samples

    xs = observable_samples(model, draws, stream) - center
    return {
        k: float(np.clip(xs, -scheme.clip_level(k), scheme.clip_level(k)).mean())
        for k in range(1, k_max + 1)
    }


def block_numbers(n: int) -> np.ndarray:
    """k(i) for i = 1..n as an array (index 1 belongs to no block: 0)."""
    out = np.zeros(n + 1, dtype=int)
    for i in range(2, n + 1):
        out[i] = block_index(i)
    return out


def truncated_path(x: np.ndarray, scheme: BlockScheme, clip_means: dict) -> np.ndarray:
    """S+ paths from raw observable paths x (replicates, n): blockwise clipped
    and centered partial sums, with S+_1 = 0."""
    r, n = x.shape
    y = np.zeros_like(x)
    h = block_index(n) if n >= 2 else 1
    for k in range(1, h + 1):
        lo, hi = scheme.block_range(k)
        hi = min(hi, n)
        if lo > n:
            break
        m = scheme.clip_level(k)
        y[:, lo - 1 : hi] = np.clip(x[:, lo - 1 : hi], -m, m) - clip_means[k]
    y[:, 0] = 0.0
    return np.cumsum(y, axis=1)


# ---------------------------------------------------------------------------
# stage 2: m-dependent approximation


@dataclass
class BlockErrors:
    k: np.ndarray
    mean_max_gap: np.ndarray  # E max_l |W_{k,l} - W~_{k,l}| per block
    stderr: np.ndarray


class _Replay:
    """Conditional clipped means by window replay over recorded innovations,
    vectorized across positions in memory-bounded chunks."""

    def __init__(self, model: Model, pool: np.ndarray, rinner: int,
                 stream: InnovationStream, chunk: int = 2048,
                 center: float = 0.0):
        if rinner < 1:
            raise InvalidInputError("need at least one inner resample")
        self.model = model
        self.pool = pool
        self.rinner = rinner
        self.rng = stream.generator()
        self.center = center
        inn_elems = int(np.prod(model.innovation_shape, dtype=int)) or 1
        self.chunk = max(64, chunk // inn_elems)

    def conditional_means(self, innovations: np.ndarray, times: np.ndarray,
                          window: int, level: float, mu: float) -> np.ndarray:
        """E(phi(X_j) | eps_{j-window..j}) - mu for 1-based times j (columns
        j-1 of the innovation array); innovations has shape (R, n, ...)."""
        if times.size == 0:
            return np.zeros((innovations.shape[0], 0))
        if times.min() <= window:
            raise CapabilityError("conditioning window extends before the path start")
        r = innovations.shape[0]
        out = np.empty((r, times.size))
        for lo in range(0, times.size, self.chunk):
            js = times[lo : lo + self.chunk]
            p = js.size
            idx = self.rng.integers(0, self.pool.shape[0], size=(r, p, self.rinner))
            states = self.pool[idx]
            if window > 0:
                cols = js[:, None] - window - 1 + np.arange(window)[None, :]
                win = innovations[:, cols]  # (R, P, window, ...)
                for t in range(window):
                    states = self.model.step(states, win[:, :, t][:, :, None])
            last = innovations[:, js - 1][:, :, None]
            vals = self.model.observe(states, last) - self.center
            out[:, lo : lo + p] = np.clip(vals, -level, level).mean(axis=-1) - mu
        return out


def mdependent_path(model: Model, x: np.ndarray, innovations: np.ndarray,
                    scheme: BlockScheme, clip_means: dict, stream: InnovationStream,
                    rinner: int = 8, pool_size: int = 4096, burn_in=None,
                    center: float = 0.0):
    """S~ paths plus the per-block approximation errors.

    Blocks k >= k0 replace each clipped observable by its conditional
    expectation given the last m_k + 1 innovations; blocks below k0 (where the
    window does not fit inside the past) pass the clipped values through
    unchanged and are later coupled trivially.  ``x`` must already be centered
    by ``center``; the replayed observations subtract the same constant.
    """
    if innovations is None:
        raise CapabilityError("model run must record innovations for window replay")
    r, n = x.shape
    pool = model.stationary_states((pool_size,), stream.split("pool"), burn_in=burn_in)
    replay = _Replay(model, pool, rinner, stream.split("replay"), center=center)
    h = block_index(n) if n >= 2 else 1
    k0 = scheme.k0()
    xt = np.zeros_like(x)
    ks, gaps, errs = [], [], []
    for k in range(1, h + 1):
        lo, hi = scheme.block_range(k)
        hi = min(hi, n)
        if lo > n:
            break
        level = scheme.clip_level(k)
        mu = clip_means[k]
        clipped = np.clip(x[:, lo - 1 : hi], -level, level) - mu
        if k < k0:
            xt[:, lo - 1 : hi] = clipped
            continue
        times = np.arange(lo, hi + 1)
        xt[:, lo - 1 : hi] = replay.conditional_means(
            innovations, times, scheme.lag(k), level, mu
        )
        walk = np.cumsum(clipped - xt[:, lo - 1 : hi], axis=1)
        per_path = np.abs(walk).max(axis=1)
        ks.append(k)
        gaps.append(per_path.mean())
        errs.append(per_path.std(ddof=1) / math.sqrt(r) if r > 1 else 0.0)
    xt[:, 0] = 0.0
    return np.cumsum(xt, axis=1), BlockErrors(
        k=np.array(ks), mean_max_gap=np.array(gaps), stderr=np.array(errs)
    )


# ---------------------------------------------------------------------------
# stage 3: calibration and the Gaussian coupling


@dataclass
class Calibration:
    """Per-block calibration: ensembles of independent same-law sub-block and
    gap sums (sorted), plus the implied per-step variance nu_k."""

    k: int
    sub_sums: np.ndarray
    gap_sums: np.ndarray
    nu: float


def calibrate_block(model: Model, scheme: BlockScheme, k: int, l_k: int,
                    clip_means: dict, stream: InnovationStream, size: int = 512,
                    rinner: int = 8, pool_size: int = 4096, burn_in=None,
                    conditional=True, center: float = 0.0) -> Calibration:
    """Ensemble of ``size`` independent draws of the block-k sub-block sum and
    gap sum, via fresh stationary segments pushed through the same replay
    machinery as the pipeline (so the laws match, inner noise included).

    One ensemble serves every item of its block, so any location error in it
    would repeat across items and accumulate linearly along the block.  For
    symmetric observables the ensemble is therefore symmetrized (union with
    its negation, which the item-sum law equals in distribution): the
    transform's conditional mean error becomes an odd function of the sum and
    averages out exactly.  Otherwise the ensemble is centered on the known
    zero mean of the clipped-and-centered increments.
    """
    m = scheme.lag(k)
    level = scheme.clip_level(k)
    mu = clip_means[k]
    warm = m if conditional else 0
    seg = warm + l_k + m
    states = model.stationary_states((size,), stream.split("calstart"), burn_in=burn_in)
    rng = stream.split("calinnov").generator()
    innov = np.empty((size, seg) + model.innovation_shape)
    x = np.empty((size, seg))
    for t in range(seg):
        e = model.draw_innovations(rng, (size,))
        innov[:, t] = e
        x[:, t] = model.observe(states, e)
        states = model.step(states, e)
    if conditional:
        pool = model.stationary_states((pool_size,), stream.split("calpool"), burn_in=burn_in)
        replay = _Replay(model, pool, rinner, stream.split("calreplay"), center=center)
        times = np.arange(warm + 1, seg + 1)
        vals = replay.conditional_means(innov, times, m, level, mu)
    else:
        vals = np.clip(x[:, warm:] - center, -level, level) - mu
    sub = vals[:, :l_k].sum(axis=1)
    gap = vals[:, l_k : l_k + m].sum(axis=1)
    if model.observable_symmetric:
        sub = np.concatenate([sub, -sub])
        gap = np.concatenate([gap, -gap])
    else:
        sub = sub - sub.mean()
        gap = gap - gap.mean()
    nu = float(sub.var(ddof=1)) / l_k if l_k > 0 else 0.0
    return Calibration(k=k, sub_sums=np.sort(sub), gap_sums=np.sort(gap), nu=nu)


def quantile_transform(values: np.ndarray, calibration_sums: np.ndarray,
                       gaussian_sd: float) -> np.ndarray:
    """Map each value through its empirical quantile in the calibration
    ensemble onto a centered Gaussian of the given standard deviation."""
    e = calibration_sums.size
    ranks = np.searchsorted(calibration_sums, values, side="left")
    p = (ranks + 0.5) / (e + 1.0)
    return ndtri(p) * gaussian_sd


@dataclass
class CouplingOutput:
    g: np.ndarray  # (replicates, n) coupled Gaussian partial sums
    nu_hat: dict  # k -> per-step variance used
    k0: int
    layouts: dict  # k -> item list of the (possibly partial) block


def gaussian_coupling(stilde: np.ndarray, scheme: BlockScheme, calibrations: dict,
                      stream: InnovationStream, couple_gaps: bool = True,
                      rule: str = "sqrt-over-k") -> CouplingOutput:
    """Per-index iid Gaussian increments coupled to the S~ increments.

    Within each block, item sums (sub-blocks always, gaps when ``couple_gaps``)
    go through the empirical-quantile transform; a Gaussian-bridge fill turns
    each item sum into per-index increments, and blocks below k0 or trailing
    tails get independent draws.  Increments are re-standardized post hoc to
    the last block's per-step variance so the output is an iid N(0, nu_{h_n})
    partial-sum path.
    """
    r, n = stilde.shape
    h = block_index(n) if n >= 2 else 1
    k0 = scheme.k0()
    rng = stream.generator()
    incr = np.zeros((r, n))
    nu_hat = {}
    layouts = {}
    xt_incr = np.diff(np.concatenate([np.zeros((r, 1)), stilde], axis=1), axis=1)
    for k in range(1, h + 1):
        lo, hi = scheme.block_range(k)
        hi = min(hi, n)
        if lo > n:
            break
        cal = calibrations[k]
        nu = max(cal.nu, 0.0)
        nu_hat[k] = nu
        sd1 = math.sqrt(nu)
        length = hi - lo + 1
        if k < k0:
            incr[:, lo - 1 : hi] = rng.normal(0.0, sd1, size=(r, length))
            layouts[k] = [(TAIL, 0, length)]
            continue
        items = block_layout(scheme, k, length, rule)
        if items[0][0] == TAIL and length == hi - lo + 1 and hi == 3**k:
            raise SchemeError(f"block {k} too short for one sub-block")
        layouts[k] = items
        base = lo - 1
        for kind, a, b in items:
            ln = b - a
            z = rng.normal(0.0, sd1, size=(r, ln))
            if kind == TAIL or (kind == GAP and not couple_gaps):
                incr[:, base + a : base + b] = z
                continue
            sums = xt_incr[:, base + a : base + b].sum(axis=1)
            calib = cal.sub_sums if kind == SUB else cal.gap_sums
            g_item = quantile_transform(sums, calib, math.sqrt(ln) * sd1)
            shift = (g_item - z.sum(axis=1)) / ln
            incr[:, base + a : base + b] = z + shift[:, None]
    # exact per-step variance of the final block, as in the limit statement
    nu_last = nu_hat[h]
    for k in range(1, h + 1):
        if nu_hat[k] > 0 and nu_hat[k] != nu_last:
            lo, hi = scheme.block_range(k)
            hi = min(hi, n)
            incr[:, lo - 1 : hi] *= math.sqrt(nu_last / nu_hat[k])
    return CouplingOutput(g=np.cumsum(incr, axis=1), nu_hat=nu_hat, k0=k0, layouts=layouts)


# ---------------------------------------------------------------------------
# the assembled pipeline


@dataclass
class PipelineResult:
    n: int
    n_grid: np.ndarray
    s: np.ndarray
    sdag: np.ndarray
    stilde: np.ndarray
    g: np.ndarray
    d: np.ndarray  # (replicates, grid) running max |S_i - G_i|
    trunc_err: np.ndarray  # running max |S_i - S+_i|
    mdep_err: np.ndarray  # running max |S+_i - S~_i|
    resid: np.ndarray  # running max |S~_i - G_i|
    d_independent: np.ndarray  # same D against an uncoupled Gaussian path
    block_errors: BlockErrors
    nu_hat: dict
    scheme: BlockScheme
    k0: int
    clip_means: dict = field(default_factory=dict)
    center: float = 0.0

    def mean_d(self) -> np.ndarray:
        return self.d.mean(axis=0)


def _running_max_at(diff: np.ndarray, grid: np.ndarray) -> np.ndarray:
    out = np.maximum.accumulate(np.abs(diff), axis=1)
    return out[:, grid - 1]


def default_grid(n: int) -> np.ndarray:
    grid = [3**k for k in range(1, block_index(n) + 1) if 3**k <= n]
    if not grid or grid[-1] != n:
        grid.append(n)
    return np.asarray(grid)


def observable_center(model: Model, stream: InnovationStream,
                      draws: int = 100_000) -> float:
    """The stationary mean of the observable: zero for declared-symmetric
    models, a Monte Carlo estimate otherwise.

    The coupling targets centered sums (S_n minus n times the drift, e.g.
    the Lyapunov exponent for matrix cocycles), so the pipeline subtracts
    this constant from every increment before staging."""
    if model.observable_symmetric:
        return 0.0
    from .models import observable_samples

    return float(observable_samples(model, draws, stream).mean())


def run_pipeline(model: Model, scheme: BlockScheme, n: int, replicates: int,
                 stream: InnovationStream, rinner: int = 8, calib_size: int = 512,
                 couple_gaps: bool = True, rule: str = "sqrt-over-k",
                 pool_size: int = 4096, burn_in=None, grid=None,
                 start="stationary", center="auto") -> PipelineResult:
    """Execute the full truncation / m-dependence / Gaussian-coupling pipeline
    on ``replicates`` stationary paths of length n.

    ``center`` is the constant subtracted from every observable increment
    ("auto": the stationary mean estimate from ``observable_center``)."""
    from .models import simulate_trajectory

    if n < 3:
        raise InvalidInputError("pipeline needs n >= 3")
    traj = simulate_trajectory(
        model, start, n, stream.split("paths"), replicates=replicates,
        record_innovations=True,
    )
    if center == "auto":
        center = observable_center(model, stream.split("center"))
    if center != 0.0:
        traj.x = traj.x - center
        traj.s = np.cumsum(traj.x, axis=1)
    h = block_index(n)
    means = clip_means_for(model, scheme, h, stream.split("clipmeans"),
                           center=center)
    sdag = truncated_path(traj.x, scheme, means)
    stilde, block_errors = mdependent_path(
        model, traj.x, traj.innovations, scheme, means, stream.split("mdep"),
        rinner=rinner, pool_size=pool_size, burn_in=burn_in, center=center,
    )
    k0 = scheme.k0()
    calibrations = {}
    for k in range(1, h + 1):
        calibrations[k] = calibrate_block(
            model, scheme, k, subblock_length(scheme, k, rule), means,
            stream.split("calib", k), size=calib_size, rinner=rinner,
            pool_size=pool_size, burn_in=burn_in, conditional=k >= k0,
            center=center,
        )
    coupling = gaussian_coupling(
        stilde, scheme, calibrations, stream.split("gauss"),
        couple_gaps=couple_gaps, rule=rule,
    )
    grid = default_grid(n) if grid is None else np.asarray(sorted(set(int(g) for g in grid)))
    nu_last = coupling.nu_hat[h]
    indep = np.cumsum(
        stream.split("indep").generator().normal(
            0.0, math.sqrt(nu_last) if nu_last > 0 else 0.0, size=stilde.shape
        ),
        axis=1,
    )
    return PipelineResult(
        n=n,
        n_grid=grid,
        s=traj.s,
        sdag=sdag,
        stilde=stilde,
        g=coupling.g,
        d=_running_max_at(traj.s - coupling.g, grid),
        trunc_err=_running_max_at(traj.s - sdag, grid),
        mdep_err=_running_max_at(sdag - stilde, grid),
        resid=_running_max_at(stilde - coupling.g, grid),
        d_independent=_running_max_at(traj.s - indep, grid),
        block_errors=block_errors,
        nu_hat=coupling.nu_hat,
        scheme=scheme,
        k0=k0,
        clip_means=means,
        center=center,
    )


def variance_drift_check(nu_hat: dict, sigma2: float, scheme: BlockScheme, n: int):
    """Rows (k, nu_k, |nu_k - sigma2|) plus the log-weighted lag-variance
    statistic (log n) max_k (m_k nu_k)^(1/2) compared to (log n)^alpha."""
    ks = sorted(nu_hat)
    rows = [(k, nu_hat[k], abs(nu_hat[k] - sigma2)) for k in ks]
    h = block_index(n) if n >= 2 else 1
    stat = math.log(n) * max(
        math.sqrt(scheme.lag(k) * max(nu_hat[k], 0.0)) for k in ks if k <= h
    )
    envelope = math.log(n) ** scheme.alpha
    return rows, stat, envelope
