import math

import numpy as np
import pytest

from asiplab.blocks import BlockScheme, block_index
from asiplab.coupling import (
    GAP,
    SUB,
    TAIL,
    block_layout,
    calibrate_block,
    clip_means_for,
    default_grid,
    gaussian_coupling,
    mdependent_path,
    quantile_transform,
    run_pipeline,
    subblock_length,
    truncated_path,
    variance_drift_check,
)
from asiplab.models import ARModel, ARSpec, Observable, simulate_trajectory
from asiplab.streams import InnovationStream

GAMMA0 = 4.0 / 3.0


def ar_scheme():
    return BlockScheme(1.0, 2.0, math.log(2.0), math.sqrt(2 * GAMMA0))


def iid_scheme():
    # iid N(0,1): coupling decay is instant, tails Gaussian
    return BlockScheme(1.0, 2.0, 2 * math.log(3.0), math.sqrt(2.0))


def ar_half():
    return ARModel(ARSpec(0.0, 0.5))


def iid_model():
    return ARModel(ARSpec(0.0, 1.0))


# ---------------------------------------------------------------------------
# layout


def test_layout_partitions_block():
    scheme = ar_scheme()
    for k in (2, 4, 6, 8):
        length = 2 * 3 ** (k - 1)
        items = block_layout(scheme, k, length)
        assert items[0][1] == 0
        assert items[-1][2] == length
        for (k1, a1, b1), (k2, a2, b2) in zip(items, items[1:]):
            assert b1 == a2
        subs = [it for it in items if it[0] == SUB]
        gaps = [it for it in items if it[0] == GAP]
        l_k = subblock_length(scheme, k)
        assert all(b - a == l_k for _, a, b in subs)
        assert all(b - a <= scheme.lag(k) for _, a, b in gaps)


def test_layout_short_block_is_tail():
    scheme = ar_scheme()
    items = block_layout(scheme, 8, subblock_length(scheme, 8) - 1)
    assert items == [(TAIL, 0, subblock_length(scheme, 8) - 1)]


def test_subblock_rules():
    scheme = ar_scheme()
    assert subblock_length(scheme, 8, "sqrt") == math.ceil(3.0**4)
    assert subblock_length(scheme, 8, "sqrt-over-k") == round(math.ceil(3.0**4) / 8)


# ---------------------------------------------------------------------------
# truncated path


def test_truncated_path_clip_inactive_drops_first_index_only():
    scheme = BlockScheme(1.0, 2.0, math.log(2.0), b=100.0)  # huge levels
    stream = InnovationStream(1)
    traj = simulate_trajectory(ar_half(), "stationary", 81, stream, replicates=8)
    means = {k: 0.0 for k in range(1, 5)}
    sdag = truncated_path(traj.x, scheme, means)
    assert np.all(sdag[:, 0] == 0.0)
    expected = traj.s - traj.s[:, [0]]
    assert np.allclose(sdag[:, 1:], expected[:, 1:], atol=1e-12)


def test_truncated_path_bounded_observable_clip_inactive():
    # gamma2 = inf: M_k = b for every k; with b at the a.s. bound the clip
    # never fires and S+ equals the centered path exactly (minus the dropped
    # first index)
    model = ARModel(ARSpec(0.0, 0.5, observable=Observable(form="tanh", zeta=0.0)))
    scheme = BlockScheme(1.0, math.inf, math.log(2.0), b=1.0)
    traj = simulate_trajectory(model, "stationary", 81, InnovationStream(41),
                               replicates=8)
    means = {k: 0.0 for k in range(1, 5)}
    sdag = truncated_path(traj.x, scheme, means)
    y = traj.x.copy()
    y[:, 0] = 0.0
    assert np.array_equal(sdag, np.cumsum(y, axis=1))  # clip provably inactive
    assert np.all(sdag[:, 0] == 0.0)


def test_truncated_path_full_clipping_constant():
    scheme = ar_scheme()
    x = np.full((2, 27), 1e6)
    means = {k: 0.5 for k in range(1, 4)}
    sdag = truncated_path(x, scheme, means)
    incr = np.diff(sdag, axis=1)
    for i in range(1, 26):
        k = block_index(i + 2)
        assert incr[0, i] == pytest.approx(scheme.clip_level(k) - 0.5)


def test_truncated_path_error_bounded_and_flat_for_gaussian_tails():
    scheme = ar_scheme()
    stream = InnovationStream(2)
    traj = simulate_trajectory(ar_half(), "stationary", 3**6, stream, replicates=16)
    means = {k: 0.0 for k in range(1, 7)}
    sdag = truncated_path(traj.x, scheme, means)
    err = np.abs(traj.s - sdag).max(axis=1)
    # dominated by the dropped X_1 plus rare clip exceedances
    assert err.mean() < 5.0


# ---------------------------------------------------------------------------
# m-dependent path


def test_mdep_memoryless_equals_truncated():
    scheme = iid_scheme()
    stream = InnovationStream(3)
    traj = simulate_trajectory(iid_model(), "stationary", 81, stream, replicates=8,
                               record_innovations=True)
    means = {k: 0.0 for k in range(1, 5)}
    sdag = truncated_path(traj.x, scheme, means)
    stilde, errors = mdependent_path(iid_model(), traj.x, traj.innovations, scheme,
                                     means, stream.split("md"), burn_in=2)
    assert np.allclose(stilde, sdag, atol=1e-12)
    assert np.all(errors.mean_max_gap < 1e-12)


def test_mdep_per_block_error_bounded_by_block_size_times_delta():
    # || max_l |W_{k,l} - W~_{k,l}| ||_1 <= 3^k delta(m_k) + 3 stderr
    scheme = ar_scheme()
    stream = InnovationStream(4)
    n = 3**6
    traj = simulate_trajectory(ar_half(), "stationary", n, stream, replicates=32,
                               record_innovations=True)
    means = {k: 0.0 for k in range(1, 7)}
    stilde, errors = mdependent_path(ar_half(), traj.x, traj.innovations, scheme,
                                     means, stream.split("md"), burn_in=60)
    delta_scale = 2.0 * math.sqrt(GAMMA0) / math.sqrt(math.pi)
    for k, gap, err in zip(errors.k, errors.mean_max_gap, errors.stderr):
        bound = 3.0**k * delta_scale * 0.5 ** scheme.lag(k) + 3.0 * err
        assert gap <= bound


def test_mdep_blocks_below_k0_pass_through():
    scheme = ar_scheme()
    k0 = scheme.k0()
    assert k0 > 1
    stream = InnovationStream(5)
    traj = simulate_trajectory(ar_half(), "stationary", 3**5, stream, replicates=4,
                               record_innovations=True)
    means = {k: 0.0 for k in range(1, 6)}
    stilde, errors = mdependent_path(ar_half(), traj.x, traj.innovations, scheme,
                                     means, stream.split("md"), burn_in=60)
    assert set(errors.k) == set(range(k0, 6))


# ---------------------------------------------------------------------------
# quantile transform and calibration


def test_quantile_transform_median_maps_near_zero():
    calib = np.sort(np.random.default_rng(0).standard_normal(511))
    out = quantile_transform(np.array([np.median(calib)]), calib, 1.0)
    assert abs(out[0]) < 0.05


def test_quantile_transform_monotone_and_capped():
    calib = np.sort(np.random.default_rng(1).standard_normal(256))
    vals = np.linspace(-6, 6, 41)
    out = quantile_transform(vals, calib, 1.0)
    assert np.all(np.diff(out) >= 0)
    assert np.isfinite(out).all()


def test_calibration_symmetrized_for_symmetric_models():
    scheme = ar_scheme()
    cal = calibrate_block(ar_half(), scheme, 4, 4, {4: 0.0}, InnovationStream(6),
                          size=128, burn_in=60)
    assert cal.sub_sums.size == 256
    assert abs(cal.sub_sums.mean()) < 1e-12
    assert cal.nu > 0


# ---------------------------------------------------------------------------
# assembled pipeline


@pytest.fixture(scope="module")
def ar_run():
    return run_pipeline(ar_half(), ar_scheme(), 3**7, 32, InnovationStream(7),
                        burn_in=60)


def test_pipeline_telescoping_inequality(ar_run):
    r = ar_run
    for col, n in enumerate(r.n_grid):
        lhs = np.abs(r.s[:, n - 1] - r.g[:, n - 1])
        rhs = r.trunc_err[:, col] + r.mdep_err[:, col] + r.resid[:, col]
        assert np.all(lhs <= rhs + 1e-9)


def test_pipeline_d_nondecreasing_per_path(ar_run):
    assert np.all(np.diff(ar_run.d, axis=1) >= -1e-12)
    assert np.all(ar_run.trunc_err >= 0)
    assert np.all(ar_run.mdep_err >= 0)


def test_pipeline_coupled_beats_independent(ar_run):
    assert ar_run.d.mean(axis=0)[-1] < ar_run.d_independent.mean(axis=0)[-1]


def test_pipeline_nu_hat_approaches_sigma2(ar_run):
    ks = sorted(ar_run.nu_hat)
    assert ar_run.nu_hat[ks[-1]] == pytest.approx(4.0, rel=0.25)


def test_pipeline_zero_observable():
    class Zero(ARModel):
        def observe(self, states, innovations):
            return np.zeros(np.broadcast(states, innovations).shape)

    res = run_pipeline(Zero(ARSpec()), iid_scheme(), 3**4, 4, InnovationStream(8),
                       burn_in=2)
    assert np.all(res.g == 0.0)
    assert np.all(res.d == 0.0)


def test_pipeline_control_run_iid_gaussian():
    res = run_pipeline(iid_model(), iid_scheme(), 3**7, 32, InnovationStream(9),
                       burn_in=2)
    # known-Gaussian inputs: the coupled path tracks far inside the
    # independent-pairing baseline
    assert res.d.mean(axis=0)[-1] < 0.5 * res.d_independent.mean(axis=0)[-1]


def test_subblock_sums_independent_across_subblocks(ar_run):
    # gap >= m_k makes sub-block sums of the m_k-dependent increments exactly
    # independent; permutation test on lag-1 correlation across sub-blocks
    r = ar_run
    scheme = r.scheme
    k = 6
    lo, hi = scheme.block_range(k)
    xt = np.diff(np.concatenate([np.zeros((r.stilde.shape[0], 1)), r.stilde], axis=1), axis=1)
    items = block_layout(scheme, k, hi - lo + 1)
    subs = [it for it in items if it[0] == SUB]
    sums = np.stack([xt[:, lo - 1 + a : lo - 1 + b].sum(axis=1) for _, a, b in subs], axis=1)
    a, b = sums[:, :-1].ravel(), sums[:, 1:].ravel()
    obs = abs(np.corrcoef(a, b)[0, 1])
    rng = np.random.default_rng(0)
    perm_stats = []
    for _ in range(999):
        p = rng.permutation(b)
        perm_stats.append(abs(np.corrcoef(a, p)[0, 1]))
    pval = (1 + sum(s >= obs for s in perm_stats)) / 1000.0
    assert pval > 0.01


def test_default_grid_block_boundaries():
    assert list(default_grid(3**4)) == [3, 9, 27, 81]
    assert list(default_grid(100)) == [3, 9, 27, 81, 100]


def test_variance_drift_check_report(ar_run):
    rows, stat, envelope = variance_drift_check(ar_run.nu_hat, 4.0, ar_run.scheme,
                                                ar_run.n)
    ks = [r[0] for r in rows]
    assert ks == sorted(ar_run.nu_hat)
    # the log-weighted lag-variance statistic stays of the order of the
    # (log n)^alpha envelope at desk scale
    assert stat > 0 and envelope > 0
    # |nu_k - sigma^2| shrinks with k (trend, not per-point noise)
    from scipy import stats as sps

    gaps = [r[2] for r in rows if r[0] >= 2]
    tau = sps.kendalltau(range(len(gaps)), gaps).statistic
    assert tau <= 0


def test_pipeline_matrix_model_centered():
    # cocycle increments have mean lambda > 0; the pipeline must subtract it,
    # otherwise D grows linearly with the drift instead of tracking coupling
    from asiplab.models import MatrixModel, RotationDiagonalLaw

    model = MatrixModel(RotationDiagonalLaw(2, shape_gamma=1.0, scale=1.0))
    scheme = BlockScheme(gamma1=1.0, gamma2=1.0, c=0.4, b=1.2)
    res = run_pipeline(model, scheme, 3**5, 16, InnovationStream(40), burn_in=48)
    assert res.center > 0.2  # the Lyapunov drift of this law
    # centered sums stay diffusive: far below the raw drift n * lambda
    assert np.abs(res.s[:, -1]).mean() < 0.5 * res.center * res.n
    assert res.d.mean(axis=0)[-1] < res.center * res.n
    for col, n in enumerate(res.n_grid):
        lhs = np.abs(res.s[:, n - 1] - res.g[:, n - 1])
        rhs = res.trunc_err[:, col] + res.mdep_err[:, col] + res.resid[:, col]
        assert np.all(lhs <= rhs + 1e-9)


def test_pipeline_deterministic_rerun():
    a = run_pipeline(ar_half(), ar_scheme(), 3**5, 8, InnovationStream(10), burn_in=40)
    b = run_pipeline(ar_half(), ar_scheme(), 3**5, 8, InnovationStream(10), burn_in=40)
    assert np.array_equal(a.g, b.g)
    assert np.array_equal(a.d, b.d)
